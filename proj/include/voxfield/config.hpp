// Copyright Contributors to the voxfield project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "voxfield/contraction.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <locale>
#include <sstream>
#include <string>
#include <vector>

namespace voxfield {

/// Raised for unknown keys and unparsable values; the CLI maps it to a usage error.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Training run configuration. Each nested struct is an INI section and each member a key,
/// e.g. `[loss] dist_weight = 0.01` or `--set loss.dist_weight=0.01`.
struct TrainConfig {
    struct Data {
        std::string path;  // transforms.json dataset; empty means a generated scene
    } data;

    struct Scene {
        int resolution = 32;
        int num_boxes = 3;
        int train_views = 24;
        int test_views = 4;
        int image_size = 64;
        std::string mode = "bounded";
    } scene;

    struct Grid {
        int initial_resolution = 16;
        int final_resolution = 64;
        std::vector<int> upscale_steps;  // empty: at 1/4 and 1/2 of the iterations
    } grid;

    struct Train {
        int iterations = 3000;
        int rays_per_batch = 4096;
        std::uint64_t seed = 0;
        double lr_density = 0.1;
        double lr_color = 0.1;
        double lr_decay = 0.1;
        int log_every = 100;
        int checkpoint_every = 0;
        bool log_timing = false;
        int threads = 0;
    } train;

    struct Loss {
        double tv_weight_density = 1e-5;
        double tv_weight_color = 1e-6;
        double dist_weight = 1e-2;
        int tv_dense_until = 10000;
        double huber_delta = 1.0;
    } loss;

    struct Occupancy {
        bool enabled = true;
        int every = 1000;
        double threshold = 1e-3;
    } occupancy;

    struct Contraction {
        std::string mode = "auto";  // auto: the dataset's capture mode
        double b = 1.0;
        double p = 2.0;
        int num_layers = 256;
        double near = 1.0;
    } contraction;

    struct Render {
        double step_size = 0.5;
        double alpha_init = 1e-4;
        double near = 0.05;
        double far = 1e10;
        double halt_transmittance = 1e-3;
    } render;

    void validate() const {
        auto need = [](bool ok, const char* what) {
            if (!ok) throw ConfigError(std::string("invalid config: ") + what);
        };
        need(grid.initial_resolution >= 2, "grid.initial_resolution must be >= 2");
        need(grid.final_resolution >= grid.initial_resolution, "grid.final_resolution below initial");
        for (std::size_t i = 0; i < grid.upscale_steps.size(); ++i) {
            need(grid.upscale_steps[i] > 0, "grid.upscale_steps must be positive");
            need(i == 0 || grid.upscale_steps[i] > grid.upscale_steps[i - 1], "grid.upscale_steps must increase");
        }
        need(train.iterations >= 1, "train.iterations must be >= 1");
        need(train.rays_per_batch >= 1, "train.rays_per_batch must be >= 1");
        need(train.lr_density > 0 && train.lr_color > 0, "learning rates must be positive");
        need(train.lr_decay > 0, "train.lr_decay must be positive");
        need(train.log_every >= 1, "train.log_every must be >= 1");
        need(train.checkpoint_every >= 0, "train.checkpoint_every must be >= 0");
        need(loss.tv_weight_density >= 0 && loss.tv_weight_color >= 0 && loss.dist_weight >= 0,
             "loss weights must be non-negative");
        need(loss.tv_dense_until >= 0, "loss.tv_dense_until must be >= 0");
        need(loss.huber_delta > 0, "loss.huber_delta must be positive");
        need(occupancy.every >= 1, "occupancy.every must be >= 1");
        need(contraction.b > 0, "contraction.b must be positive");
        need(contraction.p == 2.0 || std::isinf(contraction.p), "contraction.p must be 2 or inf");
        need(contraction.num_layers >= 2, "contraction.num_layers must be >= 2");
        need(contraction.near > 0, "contraction.near must be positive");
        need(render.step_size > 0, "render.step_size must be positive");
        need(render.alpha_init > 0 && render.alpha_init < 1, "render.alpha_init must be in (0,1)");
        need(render.near >= 0 && render.far > render.near, "render.near/far out of order");
        need(scene.resolution >= 2 && scene.image_size >= 1, "scene size invalid");
        need(scene.train_views >= 2 && scene.test_views >= 1, "scene needs >= 2 train and >= 1 test views");
        if (contraction.mode != "auto") (void)parse_capture_mode(contraction.mode);
        (void)parse_capture_mode(scene.mode);
    }
};

namespace detail {

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
    if constexpr (std::is_floating_point_v<T>) {
        if (text == "inf" || text == "infinity") return std::numeric_limits<T>::infinity();
        std::istringstream is(text);
        is.imbue(std::locale::classic());
        T v{};
        if (!(is >> v) || !is.eof()) throw ConfigError("config key " + key + ": '" + text + "' is not a number");
        return v;
    } else {
        T v{};
        const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
        if (ec != std::errc() || ptr != text.data() + text.size()) {
            throw ConfigError("config key " + key + ": '" + text + "' is not an integer");
        }
        return v;
    }
}

inline bool parse_bool(const std::string& key, const std::string& text) {
    if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
    if (text == "false" || text == "0" || text == "no" || text == "off") return false;
    throw ConfigError("config key " + key + ": '" + text + "' is not a boolean");
}

template <typename T>
std::string format_value(const T& v) {
    if constexpr (std::is_same_v<T, bool>) {
        return v ? "true" : "false";
    } else if constexpr (std::is_same_v<T, std::string>) {
        return v;
    } else if constexpr (std::is_floating_point_v<T>) {
        if (std::isinf(v)) return "inf";
        std::ostringstream os;
        os.imbue(std::locale::classic());
        os.precision(17);
        os << v;
        return os.str();
    } else {
        return std::to_string(v);
    }
}

struct ConfigField {
    std::string key;
    std::function<void(TrainConfig&, const std::string&)> set;
    std::function<std::string(const TrainConfig&)> get;
};

template <typename Section, typename T>
ConfigField field(std::string key, Section TrainConfig::*section, T Section::*member) {
    ConfigField f;
    f.key = key;
    f.set = [key, section, member](TrainConfig& c, const std::string& text) {
        T& slot = c.*section.*member;
        if constexpr (std::is_same_v<T, bool>) {
            slot = parse_bool(key, text);
        } else if constexpr (std::is_same_v<T, std::string>) {
            slot = text;
        } else if constexpr (std::is_same_v<T, std::vector<int>>) {
            slot.clear();
            std::stringstream ss(text);
            std::string item;
            while (std::getline(ss, item, ',')) {
                item.erase(0, item.find_first_not_of(" \t"));
                item.erase(item.find_last_not_of(" \t") + 1);
                if (!item.empty()) slot.push_back(parse_number<int>(key, item));
            }
        } else {
            slot = parse_number<T>(key, text);
        }
    };
    f.get = [section, member](const TrainConfig& c) {
        const T& slot = c.*section.*member;
        if constexpr (std::is_same_v<T, std::vector<int>>) {
            std::string s;
            for (std::size_t i = 0; i < slot.size(); ++i) s += (i ? "," : "") + std::to_string(slot[i]);
            return s;
        } else {
            return format_value(slot);
        }
    };
    return f;
}

}  // namespace detail

/// Every recognised key, in file order.
inline const std::vector<detail::ConfigField>& config_fields() {
    using C = TrainConfig;
    using detail::field;
    static const std::vector<detail::ConfigField> fields = {
        field("data.path", &C::data, &C::Data::path),
        field("scene.resolution", &C::scene, &C::Scene::resolution),
        field("scene.num_boxes", &C::scene, &C::Scene::num_boxes),
        field("scene.train_views", &C::scene, &C::Scene::train_views),
        field("scene.test_views", &C::scene, &C::Scene::test_views),
        field("scene.image_size", &C::scene, &C::Scene::image_size),
        field("scene.mode", &C::scene, &C::Scene::mode),
        field("grid.initial_resolution", &C::grid, &C::Grid::initial_resolution),
        field("grid.final_resolution", &C::grid, &C::Grid::final_resolution),
        field("grid.upscale_steps", &C::grid, &C::Grid::upscale_steps),
        field("train.iterations", &C::train, &C::Train::iterations),
        field("train.rays_per_batch", &C::train, &C::Train::rays_per_batch),
        field("train.seed", &C::train, &C::Train::seed),
        field("train.lr_density", &C::train, &C::Train::lr_density),
        field("train.lr_color", &C::train, &C::Train::lr_color),
        field("train.lr_decay", &C::train, &C::Train::lr_decay),
        field("train.log_every", &C::train, &C::Train::log_every),
        field("train.checkpoint_every", &C::train, &C::Train::checkpoint_every),
        field("train.log_timing", &C::train, &C::Train::log_timing),
        field("train.threads", &C::train, &C::Train::threads),
        field("loss.tv_weight_density", &C::loss, &C::Loss::tv_weight_density),
        field("loss.tv_weight_color", &C::loss, &C::Loss::tv_weight_color),
        field("loss.dist_weight", &C::loss, &C::Loss::dist_weight),
        field("loss.tv_dense_until", &C::loss, &C::Loss::tv_dense_until),
        field("loss.huber_delta", &C::loss, &C::Loss::huber_delta),
        field("occupancy.enabled", &C::occupancy, &C::Occupancy::enabled),
        field("occupancy.every", &C::occupancy, &C::Occupancy::every),
        field("occupancy.threshold", &C::occupancy, &C::Occupancy::threshold),
        field("contraction.mode", &C::contraction, &C::Contraction::mode),
        field("contraction.b", &C::contraction, &C::Contraction::b),
        field("contraction.p", &C::contraction, &C::Contraction::p),
        field("contraction.num_layers", &C::contraction, &C::Contraction::num_layers),
        field("contraction.near", &C::contraction, &C::Contraction::near),
        field("render.step_size", &C::render, &C::Render::step_size),
        field("render.alpha_init", &C::render, &C::Render::alpha_init),
        field("render.near", &C::render, &C::Render::near),
        field("render.far", &C::render, &C::Render::far),
        field("render.halt_transmittance", &C::render, &C::Render::halt_transmittance),
    };
    return fields;
}

/// Sets one dotted key; unknown keys raise ConfigError.
inline void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value) {
    for (const auto& f : config_fields()) {
        if (f.key == key) {
            f.set(cfg, value);
            return;
        }
    }
    throw ConfigError("unknown config key '" + key + "'");
}

/// Applies a `key=value` override.
inline void apply_override(TrainConfig& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
    set_config_value(cfg, assignment.substr(0, eq), assignment.substr(eq + 1));
}

inline TrainConfig parse_config(std::istream& is) {
    boost::property_tree::ptree tree;
    try {
        boost::property_tree::ini_parser::read_ini(is, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }
    TrainConfig cfg;
    for (const auto& [section, keys] : tree) {
        if (keys.empty()) throw ConfigError("config key '" + section + "' must live in a section");
        for (const auto& [key, node] : keys) set_config_value(cfg, section + "." + key, node.data());
    }
    return cfg;
}

inline TrainConfig load_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config " + path.string());
    return parse_config(is);
}

inline void write_config(std::ostream& os, const TrainConfig& cfg) {
    std::string current;
    for (const auto& f : config_fields()) {
        const auto dot = f.key.find('.');
        const std::string section = f.key.substr(0, dot);
        if (section != current) {
            os << (current.empty() ? "" : "\n") << '[' << section << "]\n";
            current = section;
        }
        os << f.key.substr(dot + 1) << " = " << f.get(cfg) << '\n';
    }
}

}  // namespace voxfield
