// Copyright 2026  The distill Authors
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

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

namespace distill::cli {

// Text of a shipped schema, e.g. "train.schema.json". Throws ConfigError for
// unknown names.
const std::string& schema_text(const std::string& name);

// Checks `document` against the named schema and throws ConfigError naming
// the offending location and keyword on the first violation.
void validate_against_schema(const std::string& document, const std::string& schema_name);

// Reads a JSON config file, validates it and returns the parsed value.
// Parse and schema failures are ConfigErrors; a missing file is an IoError.
nlohmann::json load_config(const std::filesystem::path& path, const std::string& schema_name);

}  // namespace distill::cli
