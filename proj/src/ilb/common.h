// ilb/common.h

// Copyright 2026  The ilb-asr authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#ifndef ILB_COMMON_H_
#define ILB_COMMON_H_

#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace ilb {

inline constexpr const char* kVersion = "ilb-asr 0.1.0";

// Log-domain minus-infinity sentinel. Keeps logaddexp arithmetic total:
// exp(kNegInf) underflows to exactly 0 and additions stay finite.
inline constexpr double kNegInf = -1e30;

inline double LogAdd(double a, double b) {
  if (a < b) std::swap(a, b);
  if (b <= kNegInf) return a;
  return a + std::log1p(std::exp(b - a));
}

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Operand shapes do not conform.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// An op produced NaN/Inf from finite inputs, or training diverged.
class NumericError : public Error {
 public:
  using Error::Error;
};

// API misuse: violated precondition that is the caller's responsibility.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Inconsistent configuration (flags, dimensions, presets).
class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

namespace internal {
inline void StrAppend(std::ostringstream&) {}
template <typename T, typename... Rest>
void StrAppend(std::ostringstream& os, const T& v, const Rest&... rest) {
  os << v;
  StrAppend(os, rest...);
}
}  // namespace internal

template <typename... Args>
std::string StrCat(const Args&... args) {
  std::ostringstream os;
  internal::StrAppend(os, args...);
  return os.str();
}

}  // namespace ilb

#endif  // ILB_COMMON_H_
