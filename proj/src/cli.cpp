#include "eva/cli.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <iomanip>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "eva/checkpoint.hpp"
#include "eva/evaluator.hpp"
#include "eva/runconfig.hpp"
#include "eva/trainer.hpp"

namespace eva::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string default_out_dir(std::uint64_t seed) {
    auto now = std::chrono::system_clock::now();
    std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y%m%d-%H%M%S", std::localtime(&t));
    return "runs/" + std::string(buf) + "-seed" + std::to_string(seed);
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

void echo_config(const RunConfig& cfg, const fs::path& dir) {
    fs::create_directories(dir);
    write_file(dir / "config_resolved.ini", cfg.to_ini());
}

struct LoadedModel {
    std::unique_ptr<EvaModel> model;
    RunConfig config;
    Checkpoint ckpt;
};

LoadedModel model_from_checkpoint(const std::string& path) {
    LoadedModel out;
    out.ckpt = load_checkpoint(path);
    std::size_t n_states = 0, n_objects = 0;
    out.config = RunConfig::from_json(out.ckpt.config_json, n_states, n_objects);
    out.model = std::make_unique<EvaModel>(out.config.model, n_states, n_objects);
    restore(out.ckpt, out.model->params());
    return out;
}

Dataset load_dataset_dir(const std::string& dir) {
    return load_split((fs::path(dir) / "manifest.jsonl").string());
}

// dataset geometry wins over config defaults for the image tower
void adopt_dataset_dims(RunConfig& cfg, const Dataset& ds) {
    cfg.model.enc.seq_len_image = ds.seq_len;
    cfg.model.enc.d_in = ds.token_dim;
}

int cmd_gen_data(const RunConfig& cfg) {
    Dataset ds = generate(cfg.data);
    save_dataset(ds, cfg.out_dir);
    SplitReport report = verify_split(ds);
    std::cout << report.to_string();
    std::cout << "wrote " << ds.samples.size() << " samples to " << cfg.out_dir << "\n";
    return report.clean() ? 0 : 1;
}

// tees training logs to stdout and the log file
class TeeStream : public std::ostream, private std::streambuf {
  public:
    TeeStream(std::ostream& a, std::ostream& b) : std::ostream(this), a_(a), b_(b) {}

  private:
    int overflow(int ch) override {
        if (ch != EOF) {
            a_.put(static_cast<char>(ch));
            b_.put(static_cast<char>(ch));
        }
        return ch;
    }
    std::ostream& a_;
    std::ostream& b_;
};

int cmd_train(RunConfig cfg, const std::string& data_dir) {
    Dataset ds = load_dataset_dir(data_dir);
    adopt_dataset_dims(cfg, ds);
    echo_config(cfg, cfg.out_dir);

    EvaModel model(cfg.model, ds.space.states.size(), ds.space.objects.size());
    std::string config_json = cfg.to_json(ds.space.states.size(), ds.space.objects.size());

    std::ofstream log_file(fs::path(cfg.out_dir) / "train_log.jsonl");
    TeeStream tee(std::cout, log_file);
    TrainResult result = train(model, ds, cfg.trainer, config_json, &tee);

    std::string ckpt_path = (fs::path(cfg.out_dir) / "best.ckpt").string();
    save_checkpoint(result.best, ckpt_path);
    json summary = {{"best_val_auc", result.best_val_auc},
                    {"best_epoch", result.best_epoch},
                    {"checkpoint", ckpt_path}};
    std::cout << summary.dump() << "\n";
    return 0;
}

int cmd_eval(const RunConfig& cli_cfg, const std::string& ckpt_path, const std::string& data_dir,
             const std::string& phase, const std::string& features_path) {
    LoadedModel loaded = model_from_checkpoint(ckpt_path);
    Dataset ds = load_dataset_dir(data_dir);

    EvalConfig ec = cli_cfg.eval;
    ec.phase = phase == "val" ? Phase::val : Phase::test;
    ec.t2i_mode = loaded.config.trainer.align.t2i_mode;  // score like the training run
    EvalReport report = evaluate(*loaded.model, ds, ec);

    fs::create_directories(cli_cfg.out_dir);
    write_file(fs::path(cli_cfg.out_dir) / "report.json", report.report_json());
    write_file(fs::path(cli_cfg.out_dir) / "curve.csv", report.curve_csv());
    std::ostringstream top3;
    for (const std::string& line : report.top3) top3 << line << "\n";
    write_file(fs::path(cli_cfg.out_dir) / "top3.txt", top3.str());
    if (!features_path.empty()) {
        std::ostringstream feats;
        feats << std::setprecision(17);
        const ag::Tensor& f = report.image_features;
        for (std::size_t i = 0; i < f.dim(0); ++i) {
            for (std::size_t j = 0; j < f.dim(1); ++j)
                feats << (j ? "," : "") << f.at(i, j);
            feats << "\n";
        }
        write_file(features_path, feats.str());
    }
    std::cout << report.report_json() << "\n";
    return 0;
}

struct AblateRow {
    std::string value;
    RunConfig cfg;
};

int cmd_ablate(const RunConfig& base, const std::string& data_dir, const std::string& axis) {
    Dataset ds = load_dataset_dir(data_dir);

    std::vector<AblateRow> rows;
    if (axis == "r") {
        // ranks above the default width need a wider trunk; one width for
        // every row keeps them comparable
        std::size_t heads = base.model.enc.heads;
        std::size_t max_rank = 128;
        std::size_t d = std::max(base.model.enc.d, ((max_rank / heads) + 1) * heads);
        for (std::size_t r : {8u, 16u, 32u, 64u, 128u}) {
            AblateRow row{"r=" + std::to_string(r), base};
            row.cfg.model.enc.d = d;
            row.cfg.model.enc.moe.rank = r;
            rows.push_back(std::move(row));
        }
    } else if (axis == "K") {
        for (std::size_t k : {0u, 1u, 2u, 4u, 8u}) {
            AblateRow row{"K=" + std::to_string(k), base};
            row.cfg.model.enc.moe.n_routed = std::max<std::size_t>(8, base.model.enc.moe.n_routed);
            row.cfg.model.enc.moe.k = k;
            rows.push_back(std::move(row));
        }
    } else if (axis == "split") {
        const std::pair<std::size_t, std::size_t> splits[] = {{0, 8}, {1, 8}, {2, 8}, {4, 4}};
        for (auto [shared, routed] : splits) {
            AblateRow row{std::to_string(shared) + "+" + std::to_string(routed), base};
            row.cfg.model.enc.moe.n_shared = shared;
            row.cfg.model.enc.moe.n_routed = routed;
            row.cfg.model.enc.moe.k = std::min(base.model.enc.moe.k, routed);
            rows.push_back(std::move(row));
        }
    } else if (axis == "alignment") {
        double l1 = base.trainer.align.lambda1;
        double l2 = base.trainer.align.lambda2;
        double a = base.trainer.align.alpha;
        const std::tuple<const char*, double, double, double> variants[] = {
            {"baseline", 0.0, 0.0, 0.0},
            {"t2i", l1, 0.0, 0.0},
            {"inter", l1, l2, 0.0},
            {"intra", l1, l2, a},
        };
        for (auto [name, lam1, lam2, alpha] : variants) {
            AblateRow row{name, base};
            row.cfg.trainer.align.lambda1 = lam1;
            row.cfg.trainer.align.lambda2 = lam2;
            row.cfg.trainer.align.alpha = alpha;
            rows.push_back(std::move(row));
        }
    } else {
        throw CLI::ValidationError("--axis", "unknown axis '" + axis + "'");
    }

    fs::create_directories(base.out_dir);
    std::ostringstream csv;
    csv << std::setprecision(17);
    csv << "value,unseen,seen,auc,hm\n";
    for (AblateRow& row : rows) {
        adopt_dataset_dims(row.cfg, ds);
        EvaModel model(row.cfg.model, ds.space.states.size(), ds.space.objects.size());
        std::string config_json =
            row.cfg.to_json(ds.space.states.size(), ds.space.objects.size());
        train(model, ds, row.cfg.trainer, config_json, nullptr);

        EvalConfig ec = row.cfg.eval;
        ec.phase = Phase::test;
        ec.t2i_mode = row.cfg.trainer.align.t2i_mode;
        EvalReport report = evaluate(model, ds, ec);
        csv << row.value << "," << report.best_unseen << "," << report.best_seen << ","
            << report.auc << "," << report.best_hm << "\n";
        std::cout << row.value << ": unseen " << report.best_unseen << " seen "
                  << report.best_seen << " auc " << report.auc << " hm " << report.best_hm
                  << "\n";
    }
    write_file(fs::path(base.out_dir) / ("ablate_" + axis + ".csv"), csv.str());
    return 0;
}

int cmd_inspect_experts(const RunConfig& cli_cfg, const std::string& ckpt_path) {
    LoadedModel loaded = model_from_checkpoint(ckpt_path);
    const EvaModel& model = *loaded.model;
    const EncoderConfig& enc = loaded.config.model.enc;
    if (!enc.adapters_enabled || enc.moe.n_routed == 0 || enc.moe.k == 0)
        throw std::invalid_argument("inspect-experts: model routes no experts (shared-only)");

    auto domain_stats = [&](bool states) {
        std::vector<LoadStats> layers(enc.depth, LoadStats(enc.moe.n_routed));
        ag::Tape tape;
        tape.set_grad_enabled(false);
        if (states)
            (void)model.state_features(tape, &layers);
        else
            (void)model.object_features(tape, &layers);
        return layers;
    };

    std::ostringstream csv;
    csv << std::setprecision(17);
    auto emit = [&](const char* domain, std::vector<LoadStats> layers) {
        csv << "# domain=" << domain << "\n";
        csv << "layer,expert,share\n";
        LoadStats all(enc.moe.n_routed);
        for (std::size_t l = 0; l < layers.size(); ++l) {
            auto shares = layers[l].shares();
            for (std::size_t e = 0; e < shares.size(); ++e)
                csv << l << "," << (e + 1) << "," << shares[e] << "\n";
            all.merge(layers[l]);
        }
        auto shares = all.shares();
        for (std::size_t e = 0; e < shares.size(); ++e)
            csv << "all," << (e + 1) << "," << shares[e] << "\n";
    };
    emit("state", domain_stats(true));
    emit("object", domain_stats(false));

    fs::create_directories(cli_cfg.out_dir);
    write_file(fs::path(cli_cfg.out_dir) / "expert_load.csv", csv.str());
    std::cout << csv.str();
    return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
    RunConfig cfg;

    // the config file applies before flag overrides
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            load_config_file(cfg, args[i + 1]);
        } else if (args[i].rfind("--config=", 0) == 0) {
            load_config_file(cfg, args[i].substr(9));
        }
    }

    CLI::App app{"EVA: mixture-of-experts adapters with semantic variant alignment"};
    app.require_subcommand(1);
    std::string config_path, out_dir;
    std::uint64_t master_seed = 0;
    app.add_option("--config", config_path, "key = value config file");
    auto* seed_opt = app.add_option("--seed", master_seed, "master seed");
    app.add_option("--out", out_dir, "run directory (default runs/<timestamp>-<seed>)");

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic split");
    gen->add_option("--states", cfg.data.n_states);
    gen->add_option("--objects", cfg.data.n_objects);
    gen->add_option("--train-pairs", cfg.data.train_pairs);
    gen->add_option("--val-seen-pairs", cfg.data.val_seen_pairs);
    gen->add_option("--val-unseen-pairs", cfg.data.val_unseen_pairs);
    gen->add_option("--test-seen-pairs", cfg.data.test_seen_pairs);
    gen->add_option("--test-unseen-pairs", cfg.data.test_unseen_pairs);
    gen->add_option("--images-per-pair", cfg.data.images_per_pair);
    gen->add_option("--seq-len", cfg.data.seq_len);
    gen->add_option("--token-dim", cfg.data.token_dim);
    gen->add_option("--noise", cfg.data.noise);

    std::string data_dir;
    auto* tr = app.add_subcommand("train", "train on a generated split");
    tr->add_option("--data", data_dir, "dataset directory")->required();
    tr->add_option("--epochs", cfg.trainer.epochs);
    tr->add_option("--lr", cfg.trainer.lr);
    tr->add_option("--weight-decay", cfg.trainer.weight_decay);
    tr->add_option("--batch-size", cfg.trainer.batch_size);
    tr->add_option("--lambda1", cfg.trainer.align.lambda1);
    tr->add_option("--lambda2", cfg.trainer.align.lambda2);
    tr->add_option("--alpha", cfg.trainer.align.alpha);
    bool no_adapters = false, literal_t2i = false;
    tr->add_flag("--no-adapters", no_adapters, "frozen baseline without MoE adapters");
    tr->add_flag("--literal-t2i", literal_t2i, "use the literal max-probability scores");
    tr->add_option("--rank", cfg.model.enc.moe.rank);
    tr->add_option("--k", cfg.model.enc.moe.k);
    tr->add_option("--routed-experts", cfg.model.enc.moe.n_routed);
    tr->add_option("--shared-experts", cfg.model.enc.moe.n_shared);

    std::string ckpt_path, phase = "test", features_path, mode = "closed";
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    ev->add_option("--checkpoint", ckpt_path, "EVA1 checkpoint")->required();
    ev->add_option("--data", data_dir, "dataset directory")->required();
    ev->add_option("--mode", mode)->check(CLI::IsMember({"closed", "open"}));
    ev->add_option("--phase", phase)->check(CLI::IsMember({"val", "test"}));
    ev->add_option("--beta", cfg.eval.beta);
    ev->add_option("--feasibility-threshold", cfg.eval.feasibility_threshold);
    ev->add_option("--dump-features", features_path, "write image features as CSV");

    std::string axis;
    auto* ab = app.add_subcommand("ablate", "run a configuration grid");
    ab->add_option("--data", data_dir, "dataset directory")->required();
    ab->add_option("--axis", axis, "r | K | split | alignment")
        ->required()
        ->check(CLI::IsMember({"r", "K", "split", "alignment"}));
    ab->add_option("--epochs", cfg.trainer.epochs);

    auto* insp = app.add_subcommand("inspect-experts", "expert load per domain");
    insp->add_option("--checkpoint", ckpt_path, "EVA1 checkpoint")->required();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    if (seed_opt->count() > 0) cfg.apply_master_seed(master_seed);
    cfg.out_dir = out_dir.empty() ? default_out_dir(cfg.seed) : out_dir;
    if (literal_t2i) cfg.trainer.align.t2i_mode = T2IMode::literal;
    if (no_adapters) cfg.model.enc.adapters_enabled = false;
    if (mode == "open") cfg.eval.mode = WorldMode::open;

    try {
        if (gen->parsed()) {
            echo_config(cfg, cfg.out_dir);
            return cmd_gen_data(cfg);
        }
        if (tr->parsed()) return cmd_train(cfg, data_dir);
        if (ev->parsed()) {
            echo_config(cfg, cfg.out_dir);
            return cmd_eval(cfg, ckpt_path, data_dir, phase, features_path);
        }
        if (ab->parsed()) {
            echo_config(cfg, cfg.out_dir);
            return cmd_ablate(cfg, data_dir, axis);
        }
        if (insp->parsed()) return cmd_inspect_experts(cfg, ckpt_path);
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}

int run(int argc, const char* const* argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run(args);
}

}  // namespace eva::cli
