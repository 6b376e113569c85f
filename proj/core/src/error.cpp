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

#include "ensemble/error.hpp"

#include <array>
#include <utility>

namespace ensemble {
namespace {

constexpr std::array<std::pair<ErrorCode, std::string_view>, 16> kNames{{
    {ErrorCode::kSyntax, "SyntaxError"},
    {ErrorCode::kValidation, "ValidationError"},
    {ErrorCode::kUnboundToken, "UnboundToken"},
    {ErrorCode::kExpansion, "ExpansionError"},
    {ErrorCode::kFile, "FileError"},
    {ErrorCode::kConfig, "ConfigError"},
    {ErrorCode::kIndex, "IndexError"},
    {ErrorCode::kCorruptEnvelope, "CorruptEnvelope"},
    {ErrorCode::kBrokerUnreachable, "BrokerUnreachable"},
    {ErrorCode::kMessageTooLarge, "MessageTooLarge"},
    {ErrorCode::kStorage, "StorageError"},
    {ErrorCode::kUnknownTag, "UnknownTag"},
    {ErrorCode::kWorkspace, "WorkspaceError"},
    {ErrorCode::kSpawn, "SpawnError"},
    {ErrorCode::kUnknownStudy, "UnknownStudy"},
    {ErrorCode::kProtocol, "ProtocolError"},
}};

}  // namespace

std::string_view error_code_name(ErrorCode code) {
  for (const auto& [c, name] : kNames) {
    if (c == code) return name;
  }
  return "Error";
}

ErrorCode error_code_from_name(std::string_view name) {
  for (const auto& [c, n] : kNames) {
    if (n == name) return c;
  }
  return ErrorCode::kProtocol;
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
      code_(code) {}

}  // namespace ensemble
