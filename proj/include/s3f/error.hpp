// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace s3f {

// Every library error carries the name of the operation that raised it.
class Error : public std::runtime_error {
 public:
  Error(std::string op, const std::string& what)
      : std::runtime_error(op + ": " + what), op_(std::move(op)) {}

  const std::string& op() const noexcept { return op_; }

 private:
  std::string op_;
};

inline void check(bool cond, const char* op, const std::string& what) {
  if (!cond) throw Error(op, what);
}

}  // namespace s3f
