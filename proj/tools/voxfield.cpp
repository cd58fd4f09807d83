// Copyright Contributors to the voxfield project
// SPDX-License-Identifier: Apache-2.0

#include "voxfield/selftest.hpp"
#include "voxfield/voxfield.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace voxfield;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct Options {
    std::string config;
    std::vector<std::string> sets;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    std::string checkpoint;
    std::string poses;
};

void apply_threads(const Options& o, TrainConfig* cfg = nullptr) {
    int threads = 0;
    if (o.threads) {
        threads = *o.threads;
    } else if (const char* env = std::getenv("VOXFIELD_THREADS")) {
        try {
            threads = std::stoi(env);
        } catch (const std::exception&) {
            throw ConfigError(std::string("VOXFIELD_THREADS is not an integer: ") + env);
        }
    } else if (cfg) {
        threads = cfg->train.threads;
    }
    if (threads < 0) throw ConfigError("--threads must be >= 0");
    if (cfg) cfg->train.threads = threads;
    set_thread_count(threads);
}

TrainConfig build_config(const Options& o) {
    TrainConfig cfg = o.config.empty() ? TrainConfig{} : load_config(o.config);
    for (const auto& s : o.sets) apply_override(cfg, s);
    if (o.seed) cfg.train.seed = *o.seed;
    apply_threads(o, &cfg);
    cfg.validate();
    return cfg;
}

// Bare key=value settings for verbs that do not train (bench, selftest).
std::map<std::string, std::string> bare_settings(const Options& o, const std::vector<std::string>& allowed) {
    std::map<std::string, std::string> kv;
    for (const auto& s : o.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + s + "' is not key=value");
        const std::string key = s.substr(0, eq);
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
            throw ConfigError("unknown setting '" + key + "'");
        }
        kv[key] = s.substr(eq + 1);
    }
    return kv;
}

int get_int(const std::map<std::string, std::string>& kv, const std::string& key, int fallback) {
    const auto it = kv.find(key);
    return it == kv.end() ? fallback : detail::parse_number<int>(key, it->second);
}

int cmd_train(const Options& o) {
    const TrainConfig cfg = build_config(o);
    const fs::path out = o.out.empty() ? fs::path("out") : fs::path(o.out);
    fs::create_directories(out);
    {
        std::ofstream os(out / "config.ini");
        write_config(os, cfg);
    }
    const SceneDataset ds = dataset_for(cfg);
    TrainOptions opts;
    opts.out_dir = out;
    opts.on_log = [](const MetricsRow& r) {
        std::printf("step %6d  mse %.6f  dist %.6f  psnr %6.2f dB  lr x%.4f\n", r.step, r.mse, r.dist, r.psnr,
                    r.lr_mult);
        std::fflush(stdout);
    };
    const TrainResult res = train(cfg, ds, opts);
    std::ofstream ev(out / "eval.csv");
    ev << "frame,psnr,mse\n";
    for (const ViewScore& v : res.eval.views) ev << v.frame << ',' << v.psnr << ',' << v.mse << '\n';
    std::printf("held-out PSNR %.2f dB over %zu views; mean weight entropy %.4f\n", res.eval.mean_psnr,
                res.eval.views.size(), res.eval.mean_entropy);
    std::printf("wrote %s\n", (out / "checkpoint.vxg").string().c_str());
    return kExitOk;
}

fs::path checkpoint_path(const Options& o) {
    if (!o.checkpoint.empty()) return o.checkpoint;
    if (!o.out.empty() && fs::exists(fs::path(o.out) / "checkpoint.vxg")) return fs::path(o.out) / "checkpoint.vxg";
    throw ConfigError("--checkpoint is required");
}

int cmd_render(const Options& o) {
    apply_threads(o);
    if (o.poses.empty()) throw ConfigError("render needs --poses FILE (transforms-style JSON)");
    const Checkpoint ck = read_checkpoint(checkpoint_path(o));
    std::ifstream is(o.poses);
    if (!is) throw std::runtime_error("cannot open pose file " + o.poses);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("malformed pose file " + o.poses + ": " + e.what());
    }
    if (!j.contains("w") || !j.contains("h") || !j.contains("camera_angle_x") || !j.contains("frames")) {
        throw std::runtime_error("pose file needs w, h, camera_angle_x and frames");
    }
    const int W = j.at("w").get<int>(), H = j.at("h").get<int>();
    const double focal = 0.5 * W / std::tan(0.5 * j.at("camera_angle_x").get<double>());
    const fs::path out = o.out.empty() ? fs::path("render") : fs::path(o.out);
    fs::create_directories(out);
    std::size_t k = 0;
    for (const auto& f : j.at("frames")) {
        PinholeCamera cam;
        cam.width = W;
        cam.height = H;
        cam.focal_x = cam.focal_y = focal;
        cam.cx = 0.5 * W;
        cam.cy = 0.5 * H;
        cam.c2w = detail::pose_from_json(f.at("transform_matrix"), "frame " + std::to_string(k));
        const RenderOutput r = render_image(ck.field, cam, ck.render, ck.mask.empty() ? nullptr : &ck.mask);
        char name[32];
        std::snprintf(name, sizeof name, "r_%03zu", k);
        write_png(out / (std::string(name) + ".png"), r.rgb);
        write_vxim(out / (std::string(name) + "_depth.vxim"), r.depth);
        write_vxim(out / (std::string(name) + "_trans.vxim"), r.transmittance);
        ++k;
    }
    std::printf("rendered %zu views to %s\n", k, out.string().c_str());
    return kExitOk;
}

int cmd_eval(const Options& o) {
    const TrainConfig cfg = build_config(o);
    const Checkpoint ck = read_checkpoint(checkpoint_path(o));
    const SceneDataset ds = dataset_for(cfg);
    const EvalResult ev = evaluate(ck.field, ck.mask.empty() ? nullptr : &ck.mask, ck.render, ds);
    std::ostringstream csv;
    csv << "frame,psnr,mse\n";
    for (const ViewScore& v : ev.views) csv << v.frame << ',' << v.psnr << ',' << v.mse << '\n';
    csv << "mean," << ev.mean_psnr << ",\n";
    std::cout << csv.str();
    if (!o.out.empty()) {
        fs::create_directories(o.out);
        std::ofstream(fs::path(o.out) / "eval.csv") << csv.str();
    }
    return kExitOk;
}

int cmd_bench(const Options& o) {
    apply_threads(o);
    const auto kv = bare_settings(o, {"max_n", "min_n", "rays", "rounds"});
    const int max_n = get_int(kv, "max_n", 1024);
    const int min_n = get_int(kv, "min_n", 128);
    const int rays = get_int(kv, "rays", 4096);
    const int repeats = get_int(kv, "rounds", 100);
    if (min_n < 1 || max_n < min_n || rays < 1 || repeats < 1) throw ConfigError("bench: need 1 <= min_n <= max_n");
    std::ostringstream csv;
    csv << "n,t_fast,t_oracle\n";
    std::vector<int> ns;
    for (int n = min_n; n <= max_n; n *= 2) ns.push_back(n);
    for (const selftest::ScalingRow& row : selftest::time_distloss(rays, ns, 0, repeats, 1)) {
        char line[128];
        std::snprintf(line, sizeof line, "%d,%.6e,%.6e\n", row.n, row.t_fast, row.t_oracle);
        csv << line;
        std::cout << line << std::flush;
    }
    if (!o.out.empty()) {
        fs::create_directories(o.out);
        std::ofstream(fs::path(o.out) / "bench.csv") << csv.str();
    }
    return kExitOk;
}

int cmd_selftest(const Options& o) {
    apply_threads(o);
    const auto kv = bare_settings(o, {"recovery"});
    const bool recovery = kv.count("recovery") && detail::parse_bool("recovery", kv.at("recovery"));
    using namespace selftest;
    bool ok = true;
    auto report = [&](const CheckResult& r) {
        ok = ok && r.pass;
        std::printf("%s\n", format_result(r).c_str());
        std::fflush(stdout);
    };
    report(check_distloss_oracle());
    report(check_distloss_gradient());
    report(check_distloss_scaling());
    report(check_adam());
    report(check_tv());
    report(check_render_gradient());
    report(check_contraction());
    report(check_compositing());
    if (recovery) {
        for (const auto& r : check_scene_recovery({}, [](const std::string& s) { std::printf("  %s\n", s.c_str()); }))
            report(r);
    }
    std::printf("selftest %s\n", ok ? "passed" : "FAILED");
    return ok ? kExitOk : kExitRuntime;
}

int cmd_gen_scene(const Options& o) {
    const TrainConfig cfg = build_config(o);
    const fs::path out = o.out.empty() ? fs::path("scene") : fs::path(o.out);
    TrainConfig gen = cfg;
    gen.data.path.clear();
    write_dataset(dataset_for(gen), out);
    std::printf("wrote %d + %d views to %s\n", cfg.scene.train_views, cfg.scene.test_views, out.string().c_str());
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"voxfield: dense voxel radiance fields"};
    app.require_subcommand(1);
    Options o;
    auto common = [&](CLI::App* sub, bool config) {
        if (config) sub->add_option("--config", o.config, "run config (INI)")->check(CLI::ExistingFile);
        sub->add_option("--set", o.sets, "override, section.key=value (repeatable)");
        sub->add_option("--out", o.out, "output directory");
        sub->add_option("--threads", o.threads, "worker threads, 0 = all cores");
    };
    auto* train = app.add_subcommand("train", "train a field and write a checkpoint and metrics.csv");
    common(train, true);
    train->add_option("--seed", o.seed, "random seed");
    auto* render = app.add_subcommand("render", "render PNGs from a checkpoint and a pose file");
    common(render, false);
    render->add_option("--checkpoint", o.checkpoint, "checkpoint.vxg");
    render->add_option("--poses", o.poses, "transforms-style JSON with w, h, camera_angle_x, frames");
    auto* eval = app.add_subcommand("eval", "PSNR of a checkpoint over the test split");
    common(eval, true);
    eval->add_option("--checkpoint", o.checkpoint, "checkpoint.vxg");
    eval->add_option("--seed", o.seed, "scene seed for generated datasets");
    auto* bench = app.add_subcommand("bench", "distortion loss time vs samples per ray (CSV)");
    common(bench, false);
    auto* self = app.add_subcommand("selftest", "oracle and invariant suite");
    common(self, false);
    auto* gen = app.add_subcommand("gen-scene", "write a generated box scene as a dataset");
    common(gen, true);
    gen->add_option("--seed", o.seed, "scene seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }
    try {
        if (train->parsed()) return cmd_train(o);
        if (render->parsed()) return cmd_render(o);
        if (eval->parsed()) return cmd_eval(o);
        if (bench->parsed()) return cmd_bench(o);
        if (self->parsed()) return cmd_selftest(o);
        if (gen->parsed()) return cmd_gen_scene(o);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "voxfield: %s\n", e.what());
        return kExitUsage;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "voxfield: error: %s\n", e.what());
        return kExitRuntime;
    }
    return kExitUsage;
}
