#pragma once

#include <stdexcept>
#include <string>

namespace spatial_diar {

// Bad files, malformed formats, or arguments outside a documented range.
class InputError : public std::runtime_error {
 public:
  explicit InputError(const std::string& what) : std::runtime_error(what) {}
};

// Broken numerics: singular matrices after loading, non-finite likelihoods.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

// An external hook command exited nonzero.
class HookError : public std::runtime_error {
 public:
  HookError(const std::string& stage, int status)
      : std::runtime_error("hook for stage '" + stage + "' exited with status " +
                           std::to_string(status)),
        stage_(stage),
        status_(status) {}
  const std::string& stage() const { return stage_; }
  int status() const { return status_; }

 private:
  std::string stage_;
  int status_;
};

}  // namespace spatial_diar
