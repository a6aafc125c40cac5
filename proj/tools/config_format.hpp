#pragma once

// Config files for the command-line tool: TOML (CLI11's reader) or JSON, chosen by content.
// Keys may use '_' or '-'; both map to the long option name. Sections name subcommands:
//   [train]            {"train": {"lr0": 1e-3}}
//   lr0 = 1e-3

#include <algorithm>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

namespace bamrcd::cli {

class ConfigFormat : public CLI::Config {
 public:
  std::string to_config(const CLI::App* app, bool default_also, bool write_description,
                        std::string prefix) const override {
    return toml_.to_config(app, default_also, write_description, std::move(prefix));
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    std::string text((std::istreambuf_iterator<char>(input)), std::istreambuf_iterator<char>());
    const auto first = text.find_first_not_of(" \t\r\n");
    std::vector<CLI::ConfigItem> items;
    if (first != std::string::npos && text[first] == '{') {
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(text);
      } catch (const nlohmann::json::exception& e) {
        throw CLI::ConfigError(std::string("invalid JSON config: ") + e.what());
      }
      flatten(j, {}, items);
    } else {
      std::istringstream is(text);
      items = toml_.from_config(is);
    }
    for (auto& it : items) std::replace(it.name.begin(), it.name.end(), '_', '-');
    return items;
  }

 private:
  static std::string scalar(const nlohmann::json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_null()) return "";
    if (v.is_number() || v.is_primitive()) return v.dump();
    throw CLI::ConfigError("nested arrays and objects inside arrays are not supported in configs");
  }

  static void flatten(const nlohmann::json& j, const std::vector<std::string>& parents,
                      std::vector<CLI::ConfigItem>& out) {
    if (!j.is_object()) throw CLI::ConfigError("JSON config must be an object");
    for (const auto& [key, v] : j.items()) {
      if (v.is_object()) {
        auto p = parents;
        p.push_back(key);
        flatten(v, p, out);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = key;
      if (v.is_array())
        for (const auto& e : v) item.inputs.push_back(scalar(e));
      else
        item.inputs.push_back(scalar(v));
      out.push_back(std::move(item));
    }
  }

  CLI::ConfigTOML toml_;
};

}  // namespace bamrcd::cli
