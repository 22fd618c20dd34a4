/**
 * Copyright 2026 The oodkit Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <stdexcept>
#include <string>

namespace oodkit {

/// Base class of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or image extents that do not fit together.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Argument outside its documented domain.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

enum class FormatErrc {
  kBadMagic,
  kBadHeader,
  kTruncated,
  kUnsupported,
  kVersionMismatch,
  kChecksumMismatch,
  kUnknownLayer,
  kNonFinite,
};

const char* to_string(FormatErrc code);

/// Failure to decode or encode one of the on-disk formats (PNM, .flo, OODM,
/// calibration CSV). The code lets callers tell the failure modes apart.
class FormatError : public Error {
 public:
  FormatError(FormatErrc code, const std::string& what)
      : Error(std::string(to_string(code)) + ": " + what), code_(code) {}

  FormatErrc code() const noexcept { return code_; }

 private:
  FormatErrc code_;
};

}  // namespace oodkit
