#pragma once

#include <stdexcept>
#include <string>

namespace wonderland {

/// Process exit codes shared by every CLI command.
enum class ExitCode : int {
    kOk = 0,
    kContract = 1,
    kIo = 2,
    kNumeric = 3,
};

class Error : public std::runtime_error {
   public:
    explicit Error(const std::string &what, ExitCode code) : std::runtime_error(what), code_(code) {}
    ExitCode code() const noexcept { return code_; }

   private:
    ExitCode code_;
};

/// Violated precondition or invalid argument.
class ContractError : public Error {
   public:
    explicit ContractError(const std::string &what) : Error(what, ExitCode::kContract) {}
};

/// Incompatible tensor or grid dimensions.
class ShapeError : public ContractError {
   public:
    explicit ShapeError(const std::string &what) : ContractError(what) {}
};

/// Operation invoked in the wrong lifecycle state (missing checkpoint, unloaded weights).
class StateError : public ContractError {
   public:
    explicit StateError(const std::string &what) : ContractError(what) {}
};

/// Malformed file contents.
class FormatError : public ContractError {
   public:
    explicit FormatError(const std::string &what) : ContractError(what) {}
};

class IoError : public Error {
   public:
    explicit IoError(const std::string &what) : Error(what, ExitCode::kIo) {}
};

/// NaN/Inf or a singular system.
class NumericError : public Error {
   public:
    explicit NumericError(const std::string &what) : Error(what, ExitCode::kNumeric) {}
};

}  // namespace wonderland
