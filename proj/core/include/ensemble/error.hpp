// Copyright 2026 The Ensemble Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ensemble {

/// Failure categories surfaced by the engine. The CLI maps these to exit
/// codes and the wire protocol carries the name as the prefix of `err`.
enum class ErrorCode {
  kSyntax,
  kValidation,
  kUnboundToken,
  kExpansion,
  kFile,
  kConfig,
  kIndex,
  kCorruptEnvelope,
  kBrokerUnreachable,
  kMessageTooLarge,
  kStorage,
  kUnknownTag,
  kWorkspace,
  kSpawn,
  kUnknownStudy,
  kProtocol,
};

std::string_view error_code_name(ErrorCode code);

/// Inverse of error_code_name; unknown names map to kProtocol.
ErrorCode error_code_from_name(std::string_view name);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace ensemble
