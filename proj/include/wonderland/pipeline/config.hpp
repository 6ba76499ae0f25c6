#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "wonderland/dit/cam_dit.hpp"
#include "wonderland/lalrm/lalrm.hpp"

namespace wonderland::pipeline {

// Run configuration: `section.key = value` lines, '#' comments. Only known keys are
// accepted; later sources (file, then flags) override earlier ones.

inline const std::map<std::string, std::string> &config_defaults() {
    static const std::map<std::string, std::string> d = {
        {"seed", "0"},
        {"data.complexity", "small"},
        {"data.frames", "33"},
        {"data.height", "96"},
        {"data.width", "144"},
        {"dit.num_blocks", "6"},
        {"dit.hidden", "128"},
        {"dit.heads", "4"},
        {"dit.ctrl_blocks", "3"},
        {"dit.lora_rank", "8"},
        {"dit.branches", "dual"},
        {"dit.freeze_base", "false"},
        {"dit.patch_s", "2"},
        {"dit.num_timesteps", "1000"},
        {"dit.steps", "600"},
        {"dit.lr", "1e-3"},
        {"dit.warmup", "50"},
        {"dit.batch", "2"},
        {"dit.sample_steps", "25"},
        {"lalrm.num_blocks", "6"},
        {"lalrm.hidden", "128"},
        {"lalrm.heads", "4"},
        {"lalrm.p_l", "3"},
        {"train.T", "9"},
        {"train.stride", "4"},
        {"train.V", "8"},
        {"train.V_seen", "4"},
        {"train.lambda1", "1.0"},
        {"train.lambda2", "0.5"},
        {"train.lr", "1e-3"},
        {"train.warmup", "50"},
        {"train.steps_low", "2000"},
        {"train.steps_high", "600"},
        {"train.mix_ratio", "0.25"},
        {"train.log_every", "10"},
        {"train.eval_every", "500"},
        {"train.clip_norm", "1.0"},
    };
    return d;
}

class Config {
   public:
    Config() : values_(config_defaults()) {}

    void set(const std::string &key, const std::string &value) {
        if (config_defaults().count(key) == 0) throw ContractError("unknown config key '" + key + "'");
        values_[key] = value;
    }

    /// "key = value" or "key=value".
    void set_assignment(const std::string &line, const std::string &where = "--set") {
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ContractError(where + ": expected key = value, got '" + line + "'");
        set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }

    void merge_text(std::istream &is, const std::string &source) {
        std::string line;
        for (std::size_t n = 1; std::getline(is, line); ++n) {
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            if (trim(line).empty()) continue;
            set_assignment(line, source + ":" + std::to_string(n));
        }
    }

    void merge_file(const std::filesystem::path &path) {
        std::ifstream is(path);
        if (!is) throw IoError("cannot open config " + path.string());
        merge_text(is, path.string());
    }

    const std::string &get(const std::string &key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw ContractError("unknown config key '" + key + "'");
        return it->second;
    }

    std::size_t get_size(const std::string &key) const {
        const std::string &v = get(key);
        std::size_t pos = 0;
        unsigned long long x = 0;
        try {
            if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
            x = std::stoull(v, &pos);
        } catch (const std::logic_error &) {
            pos = 0;
        }
        if (pos == 0 || pos != v.size()) throw ContractError(key + " must be a non-negative integer, got '" + v + "'");
        return static_cast<std::size_t>(x);
    }

    double get_double(const std::string &key) const {
        const std::string &v = get(key);
        std::size_t pos = 0;
        double x = 0;
        try {
            x = std::stod(v, &pos);
        } catch (const std::logic_error &) {
            pos = 0;
        }
        if (pos == 0 || pos != v.size() || !std::isfinite(x)) throw ContractError(key + " must be a number, got '" + v + "'");
        return x;
    }

    bool get_bool(const std::string &key) const {
        const std::string &v = get(key);
        if (v == "true" || v == "1") return true;
        if (v == "false" || v == "0") return false;
        throw ContractError(key + " must be true or false, got '" + v + "'");
    }

    const std::map<std::string, std::string> &values() const { return values_; }

    std::string text() const {
        std::string out;
        for (const auto &[k, v] : values_) out += k + " = " + v + "\n";
        return out;
    }

    /// Writes the resolved configuration as run.lock in dir.
    void write_lock(const std::filesystem::path &dir) const {
        std::ofstream os(dir / "run.lock");
        if (!os) throw IoError("cannot write " + (dir / "run.lock").string());
        os << text();
    }

    /// Recreates a config from a checkpoint snapshot, ignoring keys outside the schema.
    static Config from_snapshot(const std::map<std::string, std::string> &snapshot) {
        Config c;
        for (const auto &[k, v] : snapshot)
            if (config_defaults().count(k)) c.values_[k] = v;
        return c;
    }

   private:
    static std::string trim(const std::string &s) {
        const auto a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return "";
        return s.substr(a, s.find_last_not_of(" \t\r") - a + 1);
    }

    std::map<std::string, std::string> values_;
};

inline dit::DiTConfig dit_config(const Config &c) {
    dit::DiTConfig d;
    d.num_blocks = c.get_size("dit.num_blocks");
    d.hidden = c.get_size("dit.hidden");
    d.heads = c.get_size("dit.heads");
    d.ctrl_blocks = c.get_size("dit.ctrl_blocks");
    d.lora_rank = c.get_size("dit.lora_rank");
    d.branches = dit::parse_branches(c.get("dit.branches"));
    d.freeze_base = c.get_bool("dit.freeze_base");
    d.patch_s = c.get_size("dit.patch_s");
    d.num_steps = c.get_size("dit.num_timesteps");
    d.seed = c.get_size("seed");
    d.validate();
    return d;
}

inline lalrm::LaLRMConfig lalrm_config(const Config &c, lalrm::Variant variant) {
    lalrm::LaLRMConfig l;
    l.num_blocks = c.get_size("lalrm.num_blocks");
    l.hidden = c.get_size("lalrm.hidden");
    l.heads = c.get_size("lalrm.heads");
    l.p_l = c.get_size("lalrm.p_l");
    l.variant = variant;
    l.seed = c.get_size("seed");
    l.validate();
    return l;
}

}  // namespace wonderland::pipeline
