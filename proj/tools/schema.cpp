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


#include "schema.hpp"

#include <map>
#include <memory>

#include <rapidjson/document.h>
#include <rapidjson/error/en.h>
#include <rapidjson/schema.h>
#include <rapidjson/stringbuffer.h>

#include "distill/checkpoint.hpp"
#include "distill/errors.hpp"

namespace distill::cli {

// Generated from schemas/*.schema.json at configure time.
const std::map<std::string, std::string>& embedded_schemas();

namespace {

rapidjson::Document parse_or_throw(const std::string& text, const std::string& what) {
  rapidjson::Document d;
  d.Parse(text.c_str(), text.size());
  if (d.HasParseError()) {
    throw ConfigError(what + ": invalid JSON at offset " + std::to_string(d.GetErrorOffset()) + ": " +
                      rapidjson::GetParseError_En(d.GetParseError()));
  }
  return d;
}

// Resolves cross-file "$ref"s between the embedded schemas.
class EmbeddedProvider : public rapidjson::IRemoteSchemaDocumentProvider {
 public:
  const rapidjson::SchemaDocument* GetRemoteDocument(const char* uri, rapidjson::SizeType) override {
    // The reported length drops the last character on some RapidJSON
    // releases; the reference string itself is NUL-terminated.
    std::string name(uri);
    name = name.substr(0, name.find('#'));
    if (const auto slash = name.rfind('/'); slash != std::string::npos) name = name.substr(slash + 1);
    auto it = docs_.find(name);
    if (it != docs_.end()) return it->second.get();
    const rapidjson::Document d = parse_or_throw(schema_text(name), name);
    return docs_.emplace(name, std::make_unique<rapidjson::SchemaDocument>(d, this))
        .first->second.get();
  }

 private:
  std::map<std::string, std::unique_ptr<rapidjson::SchemaDocument>> docs_;
};

}  // namespace

const std::string& schema_text(const std::string& name) {
  const auto& all = embedded_schemas();
  auto it = all.find(name);
  if (it == all.end()) throw ConfigError("unknown schema " + name);
  return it->second;
}

void validate_against_schema(const std::string& document, const std::string& schema_name) {
  EmbeddedProvider provider;
  const rapidjson::Document schema_doc = parse_or_throw(schema_text(schema_name), schema_name);
  const rapidjson::SchemaDocument schema(schema_doc, &provider);
  rapidjson::Document d = parse_or_throw(document, "config");
  rapidjson::SchemaValidator validator(schema);
  if (d.Accept(validator)) return;

  rapidjson::StringBuffer where;
  validator.GetInvalidDocumentPointer().StringifyUriFragment(where);
  rapidjson::StringBuffer rule;
  validator.GetInvalidSchemaPointer().StringifyUriFragment(rule);
  std::string location = where.GetString();
  if (location == "#") location = "# (document root)";
  throw ConfigError("config violates " + schema_name + " at " + location + ": keyword '" +
                    validator.GetInvalidSchemaKeyword() + "' (schema " + rule.GetString() + ")");
}

nlohmann::json load_config(const std::filesystem::path& path, const std::string& schema_name) {
  const std::string text = read_file(path);
  validate_against_schema(text, schema_name);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace distill::cli
