#pragma once

#include <algorithm>
#include <cctype>
#include <string>
#include <string_view>

#include <CLI11.hpp>
#include <json.hpp>

namespace mixplane::cli {

// CLI11 config reader for JSON documents. Nested objects address
// subcommands, as TOML sections do: {"serve": {"port": 7000}}.
class JsonConfig : public CLI::Config {
public:
    std::string to_config(const CLI::App*, bool, bool, std::string) const override {
        throw CLI::ConversionError("writing JSON config files is not supported");
    }

    std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            throw CLI::ConversionError(std::string("bad JSON config: ") + e.what());
        }
        std::vector<CLI::ConfigItem> items;
        walk(j, {}, items);
        return items;
    }

private:
    static std::string text(const nlohmann::json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

    static void walk(const nlohmann::json& j, std::vector<std::string> parents, std::vector<CLI::ConfigItem>& out) {
        for (const auto& [name, v] : j.items()) {
            if (v.is_object()) {
                auto sub = parents;
                sub.push_back(name);
                walk(v, sub, out);
                continue;
            }
            CLI::ConfigItem item;
            item.parents = parents;
            item.name = name;
            if (v.is_array()) {
                for (const auto& e : v) {
                    item.inputs.push_back(text(e));
                }
            } else {
                item.inputs.push_back(text(v));
            }
            out.push_back(std::move(item));
        }
    }
};

// --config FILE: TOML by default, JSON for *.json.
inline void add_config(CLI::App& app, int argc, char** argv) {
    app.set_config("--config", "", "TOML or JSON file with option values")->envname("MIXPLANE_CONFIG");
    for (int i = 1; i < argc; ++i) {
        std::string_view a = argv[i];
        std::string_view path;
        if (a == "--config" && i + 1 < argc) {
            path = argv[i + 1];
        } else if (a.starts_with("--config=")) {
            path = a.substr(9);
        }
        if (path.ends_with(".json")) {
            app.config_formatter(std::make_shared<JsonConfig>());
        }
    }
    if (const char* env = std::getenv("MIXPLANE_CONFIG"); env && std::string_view(env).ends_with(".json")) {
        app.config_formatter(std::make_shared<JsonConfig>());
    }
}

// MIXPLANE_<SUBCOMMAND>_<OPTION> for every long option of every subcommand,
// MIXPLANE_<OPTION> for options of the top-level app.
inline void add_env_names(CLI::App& app, const std::string& prefix = "MIXPLANE") {
    for (CLI::Option* opt : app.get_options()) {
        const std::string& name = opt->get_single_name();
        if (name.empty() || name == "help" || name == "config" || opt->get_positional()) {
            continue;
        }
        if (!opt->get_envname().empty()) {
            continue;
        }
        std::string env = prefix + "_";
        for (char c : name) {
            env += c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
        }
        opt->envname(env);
    }
    for (CLI::App* sub : app.get_subcommands({})) {
        std::string p = prefix + "_";
        for (char c : sub->get_name()) {
            p += c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
        }
        add_env_names(*sub, p);
    }
}

}  // namespace mixplane::cli
