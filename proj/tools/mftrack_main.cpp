#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mftrack/errors.hpp"
#include "mftrack/evaluation.hpp"
#include "mftrack/image.hpp"
#include "mftrack/model.hpp"
#include "mftrack/sampling.hpp"
#include "mftrack/tracker.hpp"
#include "mftrack/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliConfig {
    std::string preset = "desk";
    uint64_t seed = 1;
    int64_t jobs = 1;
    mft::ModelConfig model;
    mft::TrainConfig train;
    mft::TrackerOptions tracker;
    mft::adapt::Config adapt;
    mft::SynthSpec synth;
    int64_t synth_sequences = 20;
    std::string bench_block = "all";
    int64_t bench_repeats = 20;
    bool scores = false;
    bool curve = false;

    std::string config_path, dataset, checkpoint, out;
};

void apply_preset(CliConfig& c, const std::string& name) {
    if (name == "desk") {
        c.model.widths = {8, 16, 32, 48};
        c.model.working_width = 64;
        c.model.head_width = 64;
        c.model.squeeze = 2;
        c.train.steps = 500;
        c.train.batch = 8;
        c.train.adam.lr = 1e-3;
        c.train.aug.shift_lo = 0.75;
        c.train.aug.shift_hi = 1.25;
    } else if (name == "full") {
        c.model.widths = {16, 32, 64, 96};
        c.model.working_width = 128;
        c.model.head_width = 128;
        c.model.squeeze = 2;
        c.train.steps = 2000;
        c.train.batch = 32;
    } else {
        throw mft::UsageError("unknown preset: " + name);
    }
    c.preset = name;
}

json effective_json(const CliConfig& c) {
    json j;
    j["preset"] = c.preset;
    j["seed"] = c.seed;
    j["jobs"] = c.jobs;
    j["model"] = {{"widths", c.model.widths},
                  {"working_width", c.model.working_width},
                  {"head_width", c.model.head_width},
                  {"squeeze", c.model.squeeze}};
    j["train"] = {{"steps", c.train.steps},   {"batch", c.train.batch},
                  {"lr", c.train.adam.lr},    {"delta", c.train.delta},
                  {"grid", c.train.grid},     {"clip_norm", c.train.clip_norm},
                  {"log_every", c.train.log_every},
                  {"augment",
                   {{"template_offset", c.train.aug.template_offset},
                    {"search_offset", c.train.aug.search_offset},
                    {"scale_lo", c.train.aug.scale_lo},
                    {"scale_hi", c.train.aug.scale_hi},
                    {"shift_lo", c.train.aug.shift_lo},
                    {"shift_hi", c.train.aug.shift_hi},
                    {"gain_lo", c.train.aug.gain_lo},
                    {"gain_hi", c.train.aug.gain_hi},
                    {"brightness", c.train.aug.brightness}}}};
    j["tracker"] = {{"update_n", c.tracker.policy.n},
                    {"lambda_d", c.tracker.policy.lambda_d},
                    {"window_weight", c.tracker.window_weight}};
    j["adapt"] = {{"mode", mft::adapt::mode_to_string(c.adapt.mode)},
                  {"lambda_bn", c.adapt.lambda_bn},
                  {"momentum_rate", c.adapt.momentum_rate},
                  {"dua_init", c.adapt.dua_init},
                  {"dua_decay", c.adapt.dua_decay},
                  {"dua_min", c.adapt.dua_min}};
    j["synth"] = {{"sequences", c.synth_sequences},
                  {"length", c.synth.length},
                  {"width", c.synth.width},
                  {"height", c.synth.height},
                  {"min_obj", c.synth.min_obj},
                  {"max_obj", c.synth.max_obj},
                  {"corruption", mft::corruption_to_string(c.synth.corruption)},
                  {"severity", c.synth.severity}};
    j["bench"] = {{"block", c.bench_block}, {"repeats", c.bench_repeats}};
    j["track"] = {{"scores", c.scores}};
    j["eval"] = {{"curve", c.curve}};
    j["dataset"] = c.dataset;
    j["checkpoint"] = c.checkpoint;
    j["out"] = c.out;
    return j;
}

template <typename T>
void read_key(const json& j, const char* key, T& out) {
    if (j.contains(key)) j.at(key).get_to(out);
}

void apply_config_json(CliConfig& c, const json& j) {
    static const std::vector<std::string> known = {
        "preset", "seed",  "jobs",  "dataset", "checkpoint", "out",  "model",
        "train",  "tracker", "adapt", "synth",   "bench",      "track", "eval"};
    for (const auto& [key, _] : j.items())
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw mft::UsageError("unknown config key: " + key);

    if (j.contains("model")) {
        const json& m = j.at("model");
        read_key(m, "widths", c.model.widths);
        read_key(m, "working_width", c.model.working_width);
        read_key(m, "head_width", c.model.head_width);
        read_key(m, "squeeze", c.model.squeeze);
    }
    if (j.contains("train")) {
        const json& t = j.at("train");
        read_key(t, "steps", c.train.steps);
        read_key(t, "batch", c.train.batch);
        read_key(t, "lr", c.train.adam.lr);
        read_key(t, "delta", c.train.delta);
        read_key(t, "grid", c.train.grid);
        read_key(t, "clip_norm", c.train.clip_norm);
        read_key(t, "log_every", c.train.log_every);
        if (t.contains("augment")) {
            const json& a = t.at("augment");
            read_key(a, "template_offset", c.train.aug.template_offset);
            read_key(a, "search_offset", c.train.aug.search_offset);
            read_key(a, "scale_lo", c.train.aug.scale_lo);
            read_key(a, "scale_hi", c.train.aug.scale_hi);
            read_key(a, "shift_lo", c.train.aug.shift_lo);
            read_key(a, "shift_hi", c.train.aug.shift_hi);
            read_key(a, "gain_lo", c.train.aug.gain_lo);
            read_key(a, "gain_hi", c.train.aug.gain_hi);
            read_key(a, "brightness", c.train.aug.brightness);
        }
    }
    if (j.contains("tracker")) {
        const json& t = j.at("tracker");
        read_key(t, "update_n", c.tracker.policy.n);
        read_key(t, "lambda_d", c.tracker.policy.lambda_d);
        read_key(t, "window_weight", c.tracker.window_weight);
    }
    if (j.contains("adapt")) {
        const json& a = j.at("adapt");
        if (a.contains("mode"))
            c.adapt.mode = mft::adapt::mode_from_string(a.at("mode").get<std::string>());
        read_key(a, "lambda_bn", c.adapt.lambda_bn);
        read_key(a, "momentum_rate", c.adapt.momentum_rate);
        read_key(a, "dua_init", c.adapt.dua_init);
        read_key(a, "dua_decay", c.adapt.dua_decay);
        read_key(a, "dua_min", c.adapt.dua_min);
    }
    if (j.contains("synth")) {
        const json& s = j.at("synth");
        read_key(s, "sequences", c.synth_sequences);
        read_key(s, "length", c.synth.length);
        read_key(s, "width", c.synth.width);
        read_key(s, "height", c.synth.height);
        read_key(s, "min_obj", c.synth.min_obj);
        read_key(s, "max_obj", c.synth.max_obj);
        if (s.contains("corruption"))
            c.synth.corruption =
                mft::corruption_from_string(s.at("corruption").get<std::string>());
        read_key(s, "severity", c.synth.severity);
    }
    if (j.contains("bench")) {
        const json& b = j.at("bench");
        read_key(b, "block", c.bench_block);
        read_key(b, "repeats", c.bench_repeats);
    }
}

json load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw mft::UsageError("cannot open config file: " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw mft::UsageError(std::string("malformed config file: ") + e.what());
    }
}

std::string f4(double v) {
    char b[64];
    std::snprintf(b, sizeof(b), "%.4f", v);
    return b;
}

std::ofstream open_artifact(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw mft::DataError("cannot write artifact: " + path);
    return out;
}

void require(const std::string& value, const char* flag) {
    if (value.empty()) throw mft::UsageError(std::string(flag) + " is required");
}

mft::ModelConfig model_from_checkpoint(const std::string& path) {
    const json j = json::parse(mft::read_checkpoint_config(path));
    mft::ModelConfig m;
    const json& s = j.at("model");
    s.at("widths").get_to(m.widths);
    s.at("working_width").get_to(m.working_width);
    s.at("head_width").get_to(m.head_width);
    s.at("squeeze").get_to(m.squeeze);
    return m;
}

void warn_serial_jobs(const CliConfig& cfg) {
    if (cfg.jobs > 1)
        std::fprintf(stderr, "note: --jobs %lld requested, running serially\n",
                     static_cast<long long>(cfg.jobs));
}

int cmd_synth(CliConfig& cfg) {
    require(cfg.out, "--out");
    fs::create_directories(cfg.out);
    mft::Rng rng(cfg.seed);
    std::vector<std::string> names;
    for (int64_t s = 0; s < cfg.synth_sequences; ++s) {
        char name[32];
        std::snprintf(name, sizeof(name), "seq%03lld", static_cast<long long>(s));
        mft::synth_generate_sequence(cfg.synth, cfg.out + "/" + name, rng);
        names.emplace_back(name);
    }
    json manifest;
    manifest["config"] = effective_json(cfg);
    manifest["sequences"] = names;
    auto out = open_artifact(cfg.out + "/dataset.json");
    out << manifest.dump(2) << "\n";
    std::fprintf(stderr, "wrote %lld sequences to %s\n",
                 static_cast<long long>(cfg.synth_sequences), cfg.out.c_str());
    return 0;
}

int cmd_train(CliConfig& cfg) {
    require(cfg.dataset, "--dataset");
    require(cfg.out, "--out");
    fs::create_directories(cfg.out);
    const auto dataset = mft::load_dataset(cfg.dataset);
    cfg.train.seed = cfg.seed;

    mft::TrackNet net(cfg.model, cfg.seed);
    const std::string echo = effective_json(cfg).dump();
    auto log = open_artifact(cfg.out + "/train_log.txt");
    log << "# config: " << echo << "\n";
    const mft::StepStats last = mft::train(net, dataset, cfg.train, &log);
    mft::save_checkpoint(cfg.out + "/checkpoint.bin", net, echo);
    std::fprintf(stderr, "final loss %.4f, checkpoint at %s/checkpoint.bin\n", last.loss,
                 cfg.out.c_str());
    return 0;
}

mft::OpeResult run_ope(CliConfig& cfg, mft::TrackNet& net) {
    const auto dataset = mft::load_dataset(cfg.dataset);
    warn_serial_jobs(cfg);
    return mft::ope_run(net, dataset, cfg.tracker, cfg.adapt);
}

int cmd_track(CliConfig& cfg) {
    require(cfg.dataset, "--dataset");
    require(cfg.checkpoint, "--checkpoint");
    require(cfg.out, "--out");
    mft::TrackNet net(model_from_checkpoint(cfg.checkpoint), cfg.seed);
    mft::load_checkpoint(cfg.checkpoint, net);
    fs::create_directories(cfg.out);

    const mft::OpeResult res = run_ope(cfg, net);
    const std::string echo = effective_json(cfg).dump();
    for (const auto& sr : res.sequences) {
        auto out = open_artifact(cfg.out + "/" + sr.name + ".txt");
        out << "# config: " << echo << "\n";
        for (size_t i = 0; i < sr.boxes.size(); ++i) {
            const mft::BBox& b = sr.boxes[i];
            out << f4(b.x1) << "," << f4(b.y1) << "," << f4(b.w()) << "," << f4(b.h());
            if (cfg.scores) out << "," << f4(sr.scores[i]);
            out << "\n";
        }
    }
    std::fprintf(stderr, "tracked %zu sequences, mean iou %.4f\n", res.sequences.size(),
                 res.mean.mean_iou);
    return 0;
}

int cmd_eval(CliConfig& cfg) {
    require(cfg.dataset, "--dataset");
    require(cfg.checkpoint, "--checkpoint");
    require(cfg.out, "--out");
    mft::TrackNet net(model_from_checkpoint(cfg.checkpoint), cfg.seed);
    mft::load_checkpoint(cfg.checkpoint, net);
    fs::create_directories(cfg.out);

    const auto t0 = std::chrono::steady_clock::now();
    const mft::OpeResult res = run_ope(cfg, net);
    const auto t1 = std::chrono::steady_clock::now();

    const std::string echo = effective_json(cfg).dump();
    auto report = open_artifact(cfg.out + "/report.txt");
    report << "# config: " << echo << "\n";
    report << "sequences: " << res.sequences.size() << "\n";
    auto emit = [&](const std::string& prefix, const mft::Metrics& m) {
        report << prefix << ".auc: " << f4(m.auc) << "\n";
        report << prefix << ".op50: " << f4(m.op50) << "\n";
        report << prefix << ".op75: " << f4(m.op75) << "\n";
        report << prefix << ".precision: " << f4(m.precision) << "\n";
        report << prefix << ".norm_precision: " << f4(m.norm_precision) << "\n";
        report << prefix << ".mean_iou: " << f4(m.mean_iou) << "\n";
    };
    int64_t frames = 0;
    for (const auto& sr : res.sequences) {
        emit("seq." + sr.name, sr.metrics);
        report << "seq." << sr.name << ".updates: " << sr.update_frames.size() << "\n";
        frames += static_cast<int64_t>(sr.boxes.size());
    }
    emit("mean", res.mean);

    if (cfg.curve) {
        auto curve = open_artifact(cfg.out + "/curve.txt");
        curve << "# config: " << echo << "\n";
        for (int i = 0; i < mft::kCurvePoints; ++i)
            curve << f4(0.05 * i) << " " << f4(res.mean_curve[static_cast<size_t>(i)])
                  << "\n";
    }
    const double secs = std::chrono::duration<double>(t1 - t0).count();
    std::fprintf(stderr, "evaluated %lld frames in %.1f s (%.1f fps), mean auc %.4f\n",
                 static_cast<long long>(frames), secs,
                 static_cast<double>(frames) / std::max(secs, 1e-9), res.mean.auc);
    return 0;
}

int cmd_bench(CliConfig& cfg) {
    require(cfg.out, "--out");
    fs::create_directories(cfg.out);
    std::vector<std::string> blocks;
    if (cfg.bench_block == "all")
        blocks = {"fmf", "psa", "full"};
    else
        blocks = {cfg.bench_block};

    const std::string echo = effective_json(cfg).dump();
    auto report = open_artifact(cfg.out + "/bench.txt");
    auto latency = open_artifact(cfg.out + "/latency.txt");
    report << "# config: " << echo << "\n";
    latency << "# config: " << echo << "\n";
    for (const auto& b : blocks) {
        const mft::BenchResult r = mft::bench_block(b, cfg.model, cfg.bench_repeats, cfg.seed);
        report << "block." << r.block << ".params: " << r.params << "\n";
        report << "block." << r.block << ".macs: " << r.macs << "\n";
        report << "block." << r.block << ".repeats: " << r.repeats << "\n";
        latency << "block." << r.block << ".median_ms: " << f4(r.median_ms) << "\n";
        latency << "block." << r.block << ".p95_ms: " << f4(r.p95_ms) << "\n";
    }
    std::fprintf(stderr, "bench report at %s/bench.txt, latencies at %s/latency.txt\n",
                 cfg.out.c_str(), cfg.out.c_str());
    return 0;
}

int run(int argc, char** argv) {
    CLI::App app{"dual-template visual tracker toolkit"};
    app.require_subcommand(1);

    CliConfig cfg;
    apply_preset(cfg, "desk");

    std::string flag_preset, flag_dtta, flag_corruption;
    double flag_lambda_bn = 0, flag_lambda_d = 0, flag_window = 0, flag_lr = 0,
           flag_severity = 0;
    int64_t flag_update_n = 0, flag_steps = 0, flag_batch = 0, flag_sequences = 0,
            flag_length = 0, flag_repeats = 0;
    std::string flag_block;

    auto add_common = [&](CLI::App* c) {
        c->add_option("--config", cfg.config_path, "JSON config file");
        c->add_option("--seed", cfg.seed, "deterministic seed");
        c->add_option("--out", cfg.out, "output directory");
        c->add_option("--jobs", cfg.jobs, "parallelism degree (serial execution)");
        c->add_option("--preset", flag_preset, "config preset: desk or full");
    };
    auto add_track_flags = [&](CLI::App* c) {
        c->add_option("--dataset", cfg.dataset, "dataset directory");
        c->add_option("--checkpoint", cfg.checkpoint, "checkpoint file");
        c->add_option("--dtta", flag_dtta, "adaptation: off, dtta, momentum, dua, adabn");
        c->add_option("--lambda-bn", flag_lambda_bn, "adaptation blend rate");
        c->add_option("--update-N", flag_update_n, "frames between template updates");
        c->add_option("--lambda-d", flag_lambda_d, "score average rate");
        c->add_option("--window-weight", flag_window, "cosine window weight");
    };

    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    add_common(synth);
    synth->add_option("--sequences", flag_sequences, "number of sequences");
    synth->add_option("--length", flag_length, "frames per sequence");
    synth->add_option("--corruption", flag_corruption,
                      "frame corruption: none, brightness, blur, noise");
    synth->add_option("--severity", flag_severity, "corruption severity");

    CLI::App* train = app.add_subcommand("train", "train a tracker checkpoint");
    add_common(train);
    train->add_option("--dataset", cfg.dataset, "dataset directory");
    train->add_option("--steps", flag_steps, "optimization steps");
    train->add_option("--batch", flag_batch, "batch size");
    train->add_option("--lr", flag_lr, "learning rate");

    CLI::App* track = app.add_subcommand("track", "write per-sequence box files");
    add_common(track);
    add_track_flags(track);
    track->add_flag("--scores", cfg.scores, "append the confidence column");

    CLI::App* eval = app.add_subcommand("eval", "one-pass evaluation report");
    add_common(eval);
    add_track_flags(eval);
    eval->add_flag("--curve", cfg.curve, "also write the success curve");

    CLI::App* bench = app.add_subcommand("bench", "latency and size comparison");
    add_common(bench);
    bench->add_option("--block", flag_block, "fmf, psa, full, or all");
    bench->add_option("--repeats", flag_repeats, "timing repeats");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    CLI::App* active = app.get_subcommands().at(0);
    auto has = [&](const char* name) {
        const CLI::Option* opt = active->get_option_no_throw(name);
        return opt != nullptr && opt->count() > 0;
    };

    json file_json;
    if (has("--config")) file_json = load_config_file(cfg.config_path);

    std::string preset = "desk";
    if (file_json.contains("preset")) file_json.at("preset").get_to(preset);
    if (has("--preset")) preset = flag_preset;
    apply_preset(cfg, preset);
    if (!file_json.is_null()) apply_config_json(cfg, file_json);

    if (!has("--seed")) read_key(file_json, "seed", cfg.seed);
    if (!has("--jobs")) read_key(file_json, "jobs", cfg.jobs);
    if (!has("--dataset")) read_key(file_json, "dataset", cfg.dataset);
    if (!has("--checkpoint")) read_key(file_json, "checkpoint", cfg.checkpoint);
    if (!has("--out")) read_key(file_json, "out", cfg.out);
    if (!has("--scores") && file_json.contains("track"))
        read_key(file_json.at("track"), "scores", cfg.scores);
    if (!has("--curve") && file_json.contains("eval"))
        read_key(file_json.at("eval"), "curve", cfg.curve);

    if (has("--dtta")) cfg.adapt.mode = mft::adapt::mode_from_string(flag_dtta);
    if (has("--lambda-bn")) cfg.adapt.lambda_bn = flag_lambda_bn;
    if (has("--update-N")) cfg.tracker.policy.n = flag_update_n;
    if (has("--lambda-d")) cfg.tracker.policy.lambda_d = flag_lambda_d;
    if (has("--window-weight")) cfg.tracker.window_weight = flag_window;
    if (has("--steps")) cfg.train.steps = flag_steps;
    if (has("--batch")) cfg.train.batch = flag_batch;
    if (has("--lr")) cfg.train.adam.lr = flag_lr;
    if (has("--sequences")) cfg.synth_sequences = flag_sequences;
    if (has("--length")) cfg.synth.length = flag_length;
    if (has("--corruption"))
        cfg.synth.corruption = mft::corruption_from_string(flag_corruption);
    if (has("--severity")) cfg.synth.severity = flag_severity;
    if (has("--block")) cfg.bench_block = flag_block;
    if (has("--repeats")) cfg.bench_repeats = flag_repeats;

    if (active == synth) return cmd_synth(cfg);
    if (active == train) return cmd_train(cfg);
    if (active == track) return cmd_track(cfg);
    if (active == eval) return cmd_eval(cfg);
    return cmd_bench(cfg);
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const mft::UsageError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const nlohmann::json::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const mft::DataError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const mft::NumericError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
