#include "mmg/checkpoint.hpp"
#include "mmg/episode_io.hpp"
#include "mmg/errors.hpp"
#include "mmg/gradcheck.hpp"
#include "mmg/graph.hpp"
#include "mmg/model.hpp"
#include "mmg/train.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(path);
    if (!os) throw mmg::IoError("cannot write " + path.string());
    os << text;
    if (!os) throw mmg::IoError("write failed on " + path.string());
}

// Episodes come from a directory when given, otherwise from the built-in
// synthetic generator so every command runs out of the box.
std::vector<mmg::Episode> load_or_synth(const std::string& data_dir,
                                        std::uint64_t seed) {
    if (!data_dir.empty()) return mmg::load_dataset(data_dir);
    mmg::SynthConfig sc;
    sc.seed = seed;
    return mmg::synth_dataset(sc);
}

struct TrainFlags {
    std::string data, out = "mmg_run", variant = "full";
    mmg::TrainConfig tc;
    int few_shot = 0;
    std::vector<int> hold_out;
    bool quiet = false;
    bool warmup_given = false;
};

std::string trimmed(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

// Expands a `--config FILE` argument: every key=value line in the file
// whose option is absent from the command line is appended as an ordinary
// `--key=value` argument, so explicit flags always win and unknown keys
// fail exactly like unknown flags.
std::vector<std::string> expand_config(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    std::string file;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size())
            file = args[i + 1];
        else if (args[i].rfind("--config=", 0) == 0)
            file = args[i].substr(9);
    }
    if (file.empty()) return args;

    std::ifstream is(file);
    if (!is) throw mmg::IoError("cannot open config file " + file);
    std::string line;
    while (std::getline(is, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trimmed(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw mmg::FormatError("config line is not key=value: " + line);
        const std::string key = trimmed(line.substr(0, eq));
        std::string value = trimmed(line.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
            value = value.substr(1, value.size() - 2);
        if (key.empty())
            throw mmg::FormatError("config line has an empty key: " + line);
        if (key == "config") continue;
        const std::string flag = "--" + key;
        const bool given = std::any_of(
            args.begin(), args.end(), [&](const std::string& a) {
                return a == flag || a.rfind(flag + "=", 0) == 0;
            });
        if (!given) args.push_back(flag + "=" + value);
    }
    return args;
}

// The default warm-up only makes sense when the run is long enough to
// leave annealing room; shrink it for short runs unless the user pinned
// it explicitly.
void fit_warmup(mmg::TrainConfig& tc, bool warmup_given) {
    if (!warmup_given && tc.warmup_epochs >= tc.epochs)
        tc.warmup_epochs = std::max(0, tc.epochs - 1);
}

int cmd_train(TrainFlags f) {
    fit_warmup(f.tc, f.warmup_given);
    const auto data = load_or_synth(f.data, f.tc.seed);
    mmg::ModelConfig mc;
    mc.variant = mmg::variant_from_string(f.variant);
    mc.num_classes = mmg::num_classes(data);
    mc.d_v = static_cast<int>(
        data.front().frames.front().patch_embeddings.cols());
    mc.d_t = static_cast<int>(data.front().text_embedding.size());

    std::vector<int> train_idx, val_idx;
    const std::vector<int>* ti = nullptr;
    const std::vector<int>* vi = nullptr;
    if (f.few_shot > 0 && !f.hold_out.empty())
        throw mmg::ConfigError("--few-shot and --hold-out are exclusive");
    if (f.few_shot > 0) {
        std::tie(train_idx, val_idx) =
            mmg::split_few_shot(data, f.few_shot, f.tc.seed);
        ti = &train_idx;
        vi = &val_idx;
    } else if (!f.hold_out.empty()) {
        std::tie(train_idx, val_idx) = mmg::split_unseen(
            data, f.hold_out, f.tc.val_fraction, f.tc.seed);
        ti = &train_idx;
        vi = &val_idx;
    }

    const mmg::TrainResult res =
        mmg::train(data, mc, f.tc, f.quiet ? nullptr : &std::cout, ti, vi);

    const fs::path out(f.out);
    fs::create_directories(out);
    mmg::save_checkpoint(res.params, &res.adam,
                         (out / "checkpoint").string());
    json history = json::array();
    for (std::size_t e = 0; e < res.history.size(); ++e)
        history.push_back({{"epoch", e},
                           {"lr", res.history[e].lr},
                           {"train_loss", res.history[e].train_loss},
                           {"train_accuracy", res.history[e].train_accuracy},
                           {"val_accuracy", res.history[e].val_accuracy}});
    write_text(out / "history.json", history.dump(2) + "\n");
    json metrics = res.val_metrics.to_json();
    metrics["best_epoch"] = res.best_epoch;
    metrics["variant"] = f.variant;
    metrics["seed"] = f.tc.seed;
    write_text(out / "metrics.json", metrics.dump(2) + "\n");

    std::cout << "best epoch " << res.best_epoch << "\n"
              << res.val_metrics.table() << "wrote " << (out / "metrics.json").string()
              << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale multimodal graph pipeline for action "
                 "classification"};
    app.require_subcommand(1);

    // Filled by CLI11 but consumed beforehand by expand_config; declared
    // here so every subcommand accepts and documents the option.
    std::string config_file;

    // gen-data ------------------------------------------------------------
    auto* gen = app.add_subcommand(
        "gen-data", "generate a synthetic episode dataset on disk");
    mmg::SynthConfig sc;
    std::string gen_out;
    gen->add_option("--classes", sc.num_classes, "number of action classes");
    gen->add_option("--episodes", sc.episodes_per_class,
                    "episodes per class");
    gen->add_option("--frames", sc.frames, "frames per episode");
    gen->add_option("--patches", sc.patches, "patches per frame");
    gen->add_option("--objects", sc.objects_per_frame,
                    "attended regions per frame");
    gen->add_option("--dv", sc.d_v, "visual embedding width");
    gen->add_option("--dt", sc.d_t, "text embedding width");
    gen->add_option("--noise", sc.noise_std, "additive noise level");
    gen->add_option("--seed", sc.seed, "generator seed");
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--config", config_file,
                    "read key=value defaults from this file");

    // train ---------------------------------------------------------------
    auto* tr = app.add_subcommand("train",
                                  "train a model (synthetic data unless "
                                  "--data is given)");
    TrainFlags tf;
    tr->add_option("--data", tf.data, "episode dataset directory");
    tr->add_option("--out", tf.out, "output directory for checkpoint, "
                                    "metrics and history");
    tr->add_option("--variant", tf.variant,
                   "visual_only | plus_text | static_graph | full");
    tr->add_option("--epochs", tf.tc.epochs, "training epochs");
    tr->add_option("--batch", tf.tc.batch_size, "episodes per update");
    tr->add_option("--warmup", tf.tc.warmup_epochs, "warm-up epochs");
    tr->add_option("--lr", tf.tc.base_lr, "base learning rate");
    tr->add_option("--val-fraction", tf.tc.val_fraction,
                   "validation share per class");
    tr->add_option("--seed", tf.tc.seed, "run seed");
    tr->add_option("--few-shot", tf.few_shot,
                   "train on this many episodes per class");
    tr->add_option("--hold-out", tf.hold_out,
                   "classes excluded from training, evaluated as unseen")
        ->delimiter(',');
    tr->add_flag("--quiet", tf.quiet, "suppress per-epoch progress");
    tr->add_option("--config", config_file,
                    "read key=value defaults from this file");
    tr->parse_complete_callback(
        [tr, &tf] { tf.warmup_given = tr->count("--warmup") > 0; });

    // eval ----------------------------------------------------------------
    auto* ev = app.add_subcommand("eval",
                                  "evaluate a checkpoint over a dataset");
    std::string ev_data, ev_ckpt, ev_metrics;
    std::uint64_t ev_seed = 7;
    ev->add_option("--data", ev_data, "episode dataset directory");
    ev->add_option("--checkpoint", ev_ckpt, "checkpoint directory")
        ->required();
    ev->add_option("--metrics", ev_metrics, "write metrics JSON here");
    ev->add_option("--seed", ev_seed,
                   "seed for the synthetic fallback dataset");
    ev->add_option("--config", config_file,
                    "read key=value defaults from this file");

    // ablate --------------------------------------------------------------
    auto* ab = app.add_subcommand(
        "ablate", "train every variant on three seeds and tabulate");
    std::string ab_data, ab_out;
    mmg::TrainConfig ab_tc;
    ab->add_option("--data", ab_data, "episode dataset directory");
    ab->add_option("--epochs", ab_tc.epochs, "training epochs");
    ab->add_option("--batch", ab_tc.batch_size, "episodes per update");
    ab->add_option("--warmup", ab_tc.warmup_epochs, "warm-up epochs");
    ab->add_option("--lr", ab_tc.base_lr, "base learning rate");
    ab->add_option("--val-fraction", ab_tc.val_fraction,
                   "validation share per class");
    ab->add_option("--seed", ab_tc.seed, "first of the three run seeds");
    ab->add_option("--out", ab_out, "write the ablation JSON here");
    ab->add_option("--config", config_file,
                    "read key=value defaults from this file");
    ab->parse_complete_callback(
        [ab, &ab_tc] { fit_warmup(ab_tc, ab->count("--warmup") > 0); });

    // export-graph --------------------------------------------------------
    auto* ex = app.add_subcommand(
        "export-graph", "emit the (post-adaptation) graph for one episode");
    std::string ex_episode, ex_ckpt, ex_format = "dot", ex_out;
    std::uint64_t ex_seed = 7;
    ex->add_option("--episode", ex_episode, "episode directory")->required();
    ex->add_option("--checkpoint", ex_ckpt, "checkpoint directory")
        ->required();
    ex->add_option("--format", ex_format, "dot | json");
    ex->add_option("--out", ex_out, "output file (stdout when omitted)");
    ex->add_option("--seed", ex_seed, "unused; accepted for uniformity");
    ex->add_option("--config", config_file,
                    "read key=value defaults from this file");

    // grad-check ----------------------------------------------------------
    auto* gc = app.add_subcommand(
        "grad-check",
        "compare analytic gradients against central differences");
    std::uint64_t gc_seed = 1;
    int gc_dv = 8, gc_dt = 8, gc_classes = 2, gc_layers = 2;
    double gc_step = 1e-6, gc_tol = 1e-3;
    gc->add_option("--seed", gc_seed, "episode and init seed");
    gc->add_option("--dv", gc_dv, "visual width");
    gc->add_option("--dt", gc_dt, "text width");
    gc->add_option("--classes", gc_classes, "class count");
    gc->add_option("--layers", gc_layers, "attention layers");
    gc->add_option("--step", gc_step, "finite-difference step");
    gc->add_option("--tolerance", gc_tol, "max relative error accepted");
    gc->add_option("--config", config_file,
                    "read key=value defaults from this file");

    // inspect -------------------------------------------------------------
    auto* in = app.add_subcommand(
        "inspect", "print the manifest of an episode, dataset or "
                   "checkpoint directory");
    std::string in_path;
    std::uint64_t in_seed = 7;
    in->add_option("--path", in_path, "directory to inspect")->required();
    in->add_option("--seed", in_seed, "unused; accepted for uniformity");
    in->add_option("--config", config_file,
                    "read key=value defaults from this file");

    std::vector<std::string> args;
    try {
        args = expand_config(argc, argv);
    } catch (const mmg::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    std::reverse(args.begin(), args.end());
    try {
        app.parse(std::move(args));
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);  // prints help, exits 0
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (gen->parsed()) {
            mmg::validate_config(sc);
            mmg::save_dataset(mmg::synth_dataset(sc), gen_out);
            std::cout << "wrote " << sc.num_classes * sc.episodes_per_class
                      << " episodes to " << gen_out << "\n";
            return 0;
        }
        if (tr->parsed()) return cmd_train(tf);
        if (ev->parsed()) {
            const auto data = load_or_synth(ev_data, ev_seed);
            const mmg::Checkpoint ck = mmg::load_checkpoint(ev_ckpt);
            std::vector<int> all(data.size());
            for (std::size_t i = 0; i < data.size(); ++i)
                all[i] = static_cast<int>(i);
            const mmg::Metrics m = mmg::evaluate(ck.params, data, all);
            std::cout << m.table();
            if (!ev_metrics.empty())
                write_text(ev_metrics, m.to_json().dump(2) + "\n");
            return 0;
        }
        if (ab->parsed()) {
            const auto data = load_or_synth(ab_data, ab_tc.seed);
            mmg::ModelConfig mc;
            mc.num_classes = mmg::num_classes(data);
            mc.d_v = static_cast<int>(
                data.front().frames.front().patch_embeddings.cols());
            mc.d_t = static_cast<int>(data.front().text_embedding.size());
            const auto rows = mmg::ablate(data, mc, ab_tc, &std::cout);
            std::cout << mmg::ablation_table(rows);
            if (!ab_out.empty())
                write_text(ab_out, mmg::ablation_json(rows).dump(2) + "\n");
            return 0;
        }
        if (ex->parsed()) {
            if (ex_format != "dot" && ex_format != "json")
                throw mmg::ConfigError("--format must be dot or json");
            const mmg::Episode ep = mmg::load_episode(ex_episode);
            const mmg::Checkpoint ck = mmg::load_checkpoint(ex_ckpt);
            mmg::EpisodeState st;
            {
                mmg::NoGradGuard ng;
                mmg::ensure_graph(ck.params, st, ep);
                // Let one pass refresh the edge weights, then reshape the
                // topology the same way evaluation would.
                mmg::forward_logits(ck.params, st, ep);
                if (ck.params.config.variant == mmg::Variant::Full)
                    mmg::adapt_state(ck.params, st);
            }
            const std::string text = ex_format == "dot"
                                         ? mmg::export_dot(st.graph)
                                         : mmg::export_structured(st.graph);
            if (ex_out.empty())
                std::cout << text;
            else
                write_text(ex_out, text);
            return 0;
        }
        if (gc->parsed()) {
            mmg::ModelConfig mc;
            mc.d_v = gc_dv;
            mc.d_t = gc_dt;
            mc.num_classes = gc_classes;
            mc.gat_layers = gc_layers;
            mc.variant = mmg::Variant::Full;
            mc.message_scaling = true;  // puts every parameter on the loss path
            const mmg::GradCheckResult r =
                mmg::grad_check_model(mc, gc_seed, gc_step);
            std::cout << mmg::grad_check_report(r);
            if (!r.within(gc_tol)) {
                std::cerr << "FAIL: worst relative error "
                          << r.worst_rel_err << " exceeds " << gc_tol
                          << "\n";
                return 3;
            }
            return 0;
        }
        if (in->parsed()) {
            const fs::path base(in_path);
            fs::path manifest;
            if (fs::exists(base / "dataset.json"))
                manifest = base / "dataset.json";
            else if (fs::exists(base / "manifest.json"))
                manifest = base / "manifest.json";
            else
                throw mmg::IoError("no dataset.json or manifest.json under " +
                                   base.string());
            std::ifstream is(manifest);
            json j;
            try {
                is >> j;
            } catch (const json::exception& e) {
                throw mmg::FormatError(manifest.string() + ": " + e.what());
            }
            std::cout << manifest.string() << "\n" << j.dump(2) << "\n";
            return 0;
        }
    } catch (const mmg::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const mmg::IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const mmg::FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const mmg::IndexError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const mmg::ShapeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const mmg::Error& e) {
        // numeric trouble: degenerate vectors, isolated nodes, and so on
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
