#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "mpcs/config.hpp"
#include "mpcs/dataset.hpp"
#include "mpcs/eval.hpp"
#include "mpcs/loss.hpp"
#include "mpcs/model.hpp"
#include "mpcs/report.hpp"
#include "mpcs/sampler.hpp"
#include "mpcs/train.hpp"
#include "mpcs/transforms.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "mpcs 0.1.0";

int64_t unix_time() {
    return std::chrono::duration_cast<std::chrono::seconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
}

uint64_t hash_file_bytes(const fs::path& p, uint64_t h) {
    std::ifstream in(p, std::ios::binary);
    char buf[8192];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= static_cast<uint8_t>(buf[i]);
            h *= 1099511628211ULL;
        }
        if (!in) break;
    }
    return h;
}

// FNV over sorted relative paths + file contents; the input-data fingerprint
// recorded in every manifest.
std::string hash_tree(const fs::path& root) {
    if (!fs::exists(root)) return "absent";
    std::vector<fs::path> files;
    if (fs::is_regular_file(root)) {
        files.push_back(root);
    } else {
        for (const auto& e : fs::recursive_directory_iterator(root))
            if (e.is_regular_file()) files.push_back(e.path());
        std::sort(files.begin(), files.end());
    }
    uint64_t h = 1469598103934665603ULL;
    for (const auto& f : files) {
        const std::string rel = fs::relative(f, root).string();
        for (char c : rel) {
            h ^= static_cast<uint8_t>(c);
            h *= 1099511628211ULL;
        }
        h = hash_file_bytes(f, h);
    }
    std::ostringstream os;
    os << std::hex << h;
    return os.str();
}

void write_json_atomic(const fs::path& path, const json& j) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp);
        out << j.dump(2) << "\n";
    }
    fs::rename(tmp, path);
}

// One run = one directory, guarded by an exclusive lock file. The manifest
// is written at start and finalized (status, end time, artifacts) at exit.
class RunContext {
public:
    RunContext(const std::string& command, const std::optional<fs::path>& requested,
               uint64_t seed, const json& resolved_config) {
        if (requested) {
            dir_ = *requested;
        } else {
            const char* root = std::getenv("MPCS_RUN_ROOT");
            dir_ = fs::path(root ? root : "runs") /
                   (command + "-seed" + std::to_string(seed) + "-" + std::to_string(unix_time()) +
                    "-" + std::to_string(::getpid()));
        }
        fs::create_directories(dir_);
        const fs::path lock = dir_ / ".lock";
        lock_fd_ = ::open(lock.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (lock_fd_ < 0)
            throw mpcs::ConfigError("run directory is locked by another invocation: " + dir_.string());
        lock_path_ = lock;

        manifest_["command"] = command;
        manifest_["version"] = kVersion;
        manifest_["seed"] = seed;
        manifest_["config"] = resolved_config;
        manifest_["start_time"] = unix_time();
        manifest_["status"] = "running";
        manifest_["artifacts"] = json::array();
        write_json_atomic(dir_ / "manifest.json", manifest_);
    }

    ~RunContext() {
        if (lock_fd_ >= 0) {
            ::close(lock_fd_);
            std::error_code ec;
            fs::remove(lock_path_, ec);
        }
    }

    const fs::path& dir() const { return dir_; }

    void add_artifact(const std::string& kind, const fs::path& path) {
        manifest_["artifacts"].push_back({{"kind", kind}, {"path", path.string()}});
    }
    void set(const std::string& key, const json& value) { manifest_[key] = value; }

    void finalize(const std::string& status) {
        manifest_["status"] = status;
        manifest_["end_time"] = unix_time();
        write_json_atomic(dir_ / "manifest.json", manifest_);
    }

private:
    fs::path dir_;
    fs::path lock_path_;
    int lock_fd_ = -1;
    json manifest_;
};

struct CommonOpts {
    std::optional<std::string> config_file;
    std::string preset = "none";
    std::optional<std::string> run_dir;
    json overrides = json::object();
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_file, "JSON config file");
    cmd->add_option("--preset", opts.preset,
                    "preset: paper-effnet|paper-resnet|synth-fast|synth-full");
    cmd->add_option("--run-dir", opts.run_dir, "run directory (default under MPCS_RUN_ROOT)");
}

json resolve(const CommonOpts& opts) {
    std::optional<fs::path> file;
    if (opts.config_file) file = fs::path(*opts.config_file);
    return mpcs::resolve_config(file, opts.preset, opts.overrides);
}

std::optional<fs::path> run_dir_of(const CommonOpts& opts) {
    if (opts.run_dir) return fs::path(*opts.run_dir);
    return std::nullopt;
}

mpcs::SplitPlan obtain_plan(const std::optional<std::string>& plan_path,
                            const std::vector<mpcs::MagnifiedSample>& samples, const json& cfg,
                            RunContext& run) {
    if (plan_path) return mpcs::SplitPlan::load(*plan_path);
    const int k = cfg.at("data").at("k_folds").get<int>();
    mpcs::SplitPlan plan = mpcs::build_folds(samples, k, cfg.at("seed").get<uint64_t>());
    plan.save(run.dir() / "plan.json");
    run.add_artifact("split_plan", run.dir() / "plan.json");
    return plan;
}

mpcs::ClassifierHead classifier_from_checkpoint(const mpcs::Checkpoint& ckpt,
                                                const mpcs::EncoderAdapter& enc) {
    if (!ckpt.tensors.count("classifier/cls_fc/w"))
        throw mpcs::DataError("checkpoint has no classifier head; fine-tune first");
    const auto& cfg = ckpt.manifest.at("config");
    mpcs::Rng dummy(0);
    mpcs::ClassifierHead cls = mpcs::ClassifierHead::build(
        enc.feature_dim, cfg.at("n_classes").get<int>(), cfg.at("dropout").get<double>(), dummy);
    mpcs::load_params(ckpt, "classifier", cls.net);
    return cls;
}

// ------------------------------------------------------------------- synth

int cmd_synth(const CommonOpts& common, const std::string& out, int specimens, int patients,
              double balance, int base, int imgsize, uint64_t seed) {
    json cfg = resolve(common);
    cfg["seed"] = seed;
    RunContext run("synth", run_dir_of(common), seed, cfg);
    mpcs::SyntheticConfig scfg;
    scfg.n_specimens = specimens;
    scfg.n_patients = patients;
    scfg.class_balance = balance;
    scfg.base_size = base;
    scfg.out_size = imgsize;
    scfg.seed = seed;
    const auto samples = mpcs::generate_synthetic(scfg, out);
    run.add_artifact("dataset", out);
    run.set("n_specimens", samples.size());
    run.set("data_hash", hash_tree(out));
    run.finalize("ok");
    std::cout << "wrote " << samples.size() << " specimens x " << mpcs::kMagnifications.size()
              << " magnifications under " << out << "\n";
    return 0;
}

// ---------------------------------------------------------------- pretrain

int cmd_pretrain(const CommonOpts& common, const std::string& data,
                 const std::optional<std::string>& out_ckpt) {
    json cfg = resolve(common);
    RunContext run("pretrain", run_dir_of(common), cfg.at("seed").get<uint64_t>(), cfg);
    run.set("data_hash", hash_tree(data));

    const auto ingest = mpcs::ingest_layout(data);
    for (const auto& w : ingest.warnings)
        std::cerr << "warning: " << w.specimen_id << ": " << w.message << "\n";

    const mpcs::PretrainConfig pcfg = mpcs::pretrain_config_from(cfg);
    mpcs::MetricLog log(run.dir() / "metrics.jsonl");
    const auto outcome = mpcs::pretrain(pcfg, ingest.samples, &log, run.dir());

    const fs::path ckpt_path = out_ckpt ? fs::path(*out_ckpt) : run.dir() / "checkpoint.mpcs";
    outcome.checkpoint.save(ckpt_path);
    run.add_artifact("checkpoint", ckpt_path);
    run.add_artifact("metrics", run.dir() / "metrics.jsonl");
    run.set("final_loss", outcome.epoch_losses.back());
    run.set("label_reads", outcome.label_reads);
    run.finalize("ok");
    std::cout << "pretrained " << pcfg.encoder << " for " << pcfg.epochs << " epochs; final loss "
              << outcome.epoch_losses.back() << "; checkpoint " << ckpt_path << "\n";
    return 0;
}

// ------------------------------------------------------- finetune / lineval

int cmd_finetune(const CommonOpts& common, const std::string& data,
                 const std::optional<std::string>& ckpt_path,
                 const std::optional<std::string>& plan_path, int fold, bool force_linear) {
    json cfg = resolve(common);
    if (force_linear) cfg["finetune"]["mode"] = "linear";
    RunContext run(force_linear ? "lineval" : "finetune", run_dir_of(common),
                   cfg.at("seed").get<uint64_t>(), cfg);
    run.set("data_hash", hash_tree(data));

    const auto ingest = mpcs::ingest_layout(data);
    mpcs::SplitPlan plan = obtain_plan(plan_path, ingest.samples, cfg, run);

    mpcs::FinetuneConfig fcfg = mpcs::finetune_config_from(cfg);
    fcfg.n_classes = static_cast<int>(ingest.class_names.size());

    std::optional<mpcs::Checkpoint> init;
    if (ckpt_path) {
        init = mpcs::Checkpoint::load(*ckpt_path);
        run.set("init_checkpoint", *ckpt_path);
    }

    mpcs::MetricLog log(run.dir() / "metrics.jsonl");
    const auto outcome =
        mpcs::finetune(fcfg, init ? &*init : nullptr, plan, fold, ingest.samples, &log);

    outcome.checkpoint.save(run.dir() / "checkpoint.mpcs");
    outcome.test_report.save(run.dir() / "report.json");
    mpcs::write_predictions_csv(run.dir() / "predictions.csv", outcome.test_predictions);
    run.add_artifact("checkpoint", run.dir() / "checkpoint.mpcs");
    run.add_artifact("report", run.dir() / "report.json");
    run.add_artifact("predictions", run.dir() / "predictions.csv");
    run.set("test_ila", outcome.test_report.ila);
    run.set("test_pla", outcome.test_report.pla);
    run.set("leakage_violations", outcome.leakage_violations);
    run.finalize("ok");
    std::cout << (force_linear ? "linear evaluation" : "fine-tuning") << " fold " << fold
              << ": test ILA " << outcome.test_report.ila << ", PLA " << outcome.test_report.pla
              << "\n";
    return 0;
}

// -------------------------------------------------------------------- eval

int cmd_eval(const CommonOpts& common, const std::string& data, const std::string& ckpt_path,
             const std::optional<std::string>& plan_path, std::optional<int> fold,
             const std::string& mf, int patch_size, int stride) {
    json cfg = resolve(common);
    RunContext run("eval", run_dir_of(common), cfg.at("seed").get<uint64_t>(), cfg);
    run.set("data_hash", hash_tree(data));

    const auto ingest = mpcs::ingest_layout(data);
    const mpcs::Checkpoint ckpt = mpcs::Checkpoint::load(ckpt_path);
    auto enc = mpcs::encoder_from_checkpoint(ckpt);
    mpcs::ClassifierHead cls = classifier_from_checkpoint(ckpt, *enc);
    const int input_size = ckpt.manifest.at("config").at("input_size").get<int>();

    std::set<std::string> ids;
    if (plan_path || fold) {
        if (!plan_path || !fold)
            throw mpcs::ConfigError("--plan and --fold must be given together");
        const mpcs::SplitPlan plan = mpcs::SplitPlan::load(*plan_path);
        ids = plan.fold_specimens(*fold);
    } else {
        for (const auto& s : ingest.samples) ids.insert(s.specimen_id);
    }

    mpcs::EvalReport report;
    std::vector<mpcs::PredictionRecord> preds;
    if (patch_size > 0) {
        const auto pe = mpcs::evaluate_patchwise(*enc, cls, ingest.samples, ids, mf, input_size,
                                                 patch_size, stride > 0 ? stride : patch_size);
        preds = pe.image_predictions;
        report = mpcs::make_report(preds, fold ? *fold : -1);
        report.patch_accuracy = pe.patch_accuracy;
        report.image_accuracy = pe.image_accuracy;
        mpcs::write_predictions_csv(run.dir() / "patch_predictions.csv", pe.patch_predictions);
        run.add_artifact("patch_predictions", run.dir() / "patch_predictions.csv");
    } else {
        preds = mpcs::predict(*enc, cls, ingest.samples, ids, mf, input_size);
        report = mpcs::make_report(preds, fold ? *fold : -1);
    }
    report.save(run.dir() / "report.json");
    mpcs::write_predictions_csv(run.dir() / "predictions.csv", preds);
    run.add_artifact("report", run.dir() / "report.json");
    run.add_artifact("predictions", run.dir() / "predictions.csv");
    run.set("ila", report.ila);
    run.finalize("ok");
    std::cout << "eval: ILA " << report.ila << ", PLA " << report.pla;
    if (report.patch_accuracy)
        std::cout << ", patch " << *report.patch_accuracy << ", image " << *report.image_accuracy;
    std::cout << "\n";
    return 0;
}

// ------------------------------------------------------------------- sweep

int cmd_sweep(const CommonOpts& common, const std::string& data,
              const std::optional<std::string>& ckpt_path,
              const std::optional<std::string>& plan_path, int fold,
              const std::string& fractions_csv) {
    json cfg = resolve(common);
    RunContext run("sweep", run_dir_of(common), cfg.at("seed").get<uint64_t>(), cfg);
    run.set("data_hash", hash_tree(data));

    std::vector<double> fractions;
    std::stringstream ss(fractions_csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) fractions.push_back(std::stod(tok));
    if (fractions.empty()) throw mpcs::ConfigError("no fractions given");

    const auto ingest = mpcs::ingest_layout(data);
    mpcs::SplitPlan plan = obtain_plan(plan_path, ingest.samples, cfg, run);
    std::optional<mpcs::Checkpoint> init;
    if (ckpt_path) init = mpcs::Checkpoint::load(*ckpt_path);

    mpcs::MetricLog log(run.dir() / "metrics.jsonl");
    const auto rows = mpcs::label_efficiency_sweep(fractions, [&](double fraction) {
        json fcfg_json = cfg;
        fcfg_json["finetune"]["label_fraction"] = fraction;
        mpcs::FinetuneConfig fcfg = mpcs::finetune_config_from(fcfg_json);
        fcfg.n_classes = static_cast<int>(ingest.class_names.size());
        const auto outcome =
            mpcs::finetune(fcfg, init ? &*init : nullptr, plan, fold, ingest.samples, &log);
        outcome.test_report.save(run.dir() / ("report_" + mpcs::fraction_key(fraction) + ".json"));
        return outcome.test_report;
    });
    mpcs::write_sweep_csv(run.dir() / "sweep.csv", rows);
    run.add_artifact("sweep", run.dir() / "sweep.csv");
    run.finalize("ok");
    for (const auto& [f, r] : rows)
        std::cout << "fraction " << mpcs::fraction_key(f) << ": ILA " << r.ila << "\n";
    return 0;
}

// -------------------------------------------------------------------- xmag

int cmd_xmag(const CommonOpts& common, const std::optional<std::string>& reports_dir,
             const std::optional<std::string>& data, const std::optional<std::string>& ckpt_path,
             const std::optional<std::string>& plan_path, int fold) {
    json cfg = resolve(common);
    RunContext run("xmag", run_dir_of(common), cfg.at("seed").get<uint64_t>(), cfg);

    std::map<std::pair<int, int>, mpcs::EvalReport> matrix;
    if (reports_dir) {
        for (mpcs::Magnification train : mpcs::kMagnifications)
            for (mpcs::Magnification eval : mpcs::kMagnifications) {
                const fs::path p =
                    fs::path(*reports_dir) / ("xmag_train" + mpcs::to_string(train) + "_eval" +
                                              mpcs::to_string(eval) + ".json");
                if (!fs::exists(p)) throw mpcs::DataError("IncompleteMatrix: missing " + p.string());
                matrix[{mpcs::to_int(train), mpcs::to_int(eval)}] = mpcs::EvalReport::load(p);
            }
    } else {
        if (!data) throw mpcs::ConfigError("xmag needs --reports or --data");
        run.set("data_hash", hash_tree(*data));
        const auto ingest = mpcs::ingest_layout(*data);
        mpcs::SplitPlan plan = obtain_plan(plan_path, ingest.samples, cfg, run);
        std::optional<mpcs::Checkpoint> init;
        if (ckpt_path) init = mpcs::Checkpoint::load(*ckpt_path);
        mpcs::MetricLog log(run.dir() / "metrics.jsonl");
        const std::set<std::string> test_ids = plan.fold_specimens(fold);

        for (mpcs::Magnification train_mf : mpcs::kMagnifications) {
            json fcfg_json = cfg;
            fcfg_json["finetune"]["magnification"] = mpcs::to_string(train_mf);
            mpcs::FinetuneConfig fcfg = mpcs::finetune_config_from(fcfg_json);
            fcfg.n_classes = static_cast<int>(ingest.class_names.size());
            const auto outcome =
                mpcs::finetune(fcfg, init ? &*init : nullptr, plan, fold, ingest.samples, &log);
            auto enc = mpcs::encoder_from_checkpoint(outcome.checkpoint);
            mpcs::ClassifierHead cls = classifier_from_checkpoint(outcome.checkpoint, *enc);
            for (mpcs::Magnification eval_mf : mpcs::kMagnifications) {
                const auto preds = mpcs::predict(*enc, cls, ingest.samples, test_ids,
                                                 mpcs::to_string(eval_mf), fcfg.input_size);
                mpcs::EvalReport rep = mpcs::make_report(preds, fold);
                rep.save(run.dir() / ("xmag_train" + mpcs::to_string(train_mf) + "_eval" +
                                      mpcs::to_string(eval_mf) + ".json"));
                matrix[{mpcs::to_int(train_mf), mpcs::to_int(eval_mf)}] = rep;
            }
        }
    }

    for (auto mode : {mpcs::CrossMagMode::Type1, mpcs::CrossMagMode::Type2}) {
        const auto summary = mpcs::cross_magnification(matrix, mode);
        const std::string tag = mode == mpcs::CrossMagMode::Type1 ? "type1" : "type2";
        json j;
        std::ofstream csv(run.dir() / ("xmag_" + tag + ".csv"));
        csv << "magnification,ila,pla\n";
        for (const auto& [mf, m] : summary) {
            csv << mf << "," << m.ila << "," << m.pla << "\n";
            j[std::to_string(mf)] = {{"ila", m.ila}, {"pla", m.pla}};
        }
        write_json_atomic(run.dir() / ("xmag_" + tag + ".json"), j);
        run.add_artifact("xmag_" + tag, run.dir() / ("xmag_" + tag + ".csv"));
        std::cout << tag << ":";
        for (const auto& [mf, m] : summary) std::cout << " " << mf << "x=" << m.ila;
        std::cout << "\n";
    }
    run.finalize("ok");
    return 0;
}

// ------------------------------------------------------------------ report

int cmd_report(const CommonOpts& common, const std::optional<std::string>& data,
               const std::optional<std::string>& ckpt_path,
               const std::optional<std::string>& plan_path, std::optional<int> fold,
               const std::string& cam_layer, int cam_count,
               const std::optional<std::string>& tables_dir, const std::string& layout) {
    json cfg = resolve(common);
    RunContext run("report", run_dir_of(common), cfg.at("seed").get<uint64_t>(), cfg);

    if (tables_dir) {
        std::map<std::string, std::vector<mpcs::EvalReport>> by_method;
        for (const auto& e : fs::directory_iterator(*tables_dir)) {
            if (e.path().extension() != ".json") continue;
            // <method>__<anything>.json groups fold reports per method
            const std::string stem = e.path().stem().string();
            const auto sep = stem.find("__");
            const std::string method = sep == std::string::npos ? stem : stem.substr(0, sep);
            by_method[method].push_back(mpcs::EvalReport::load(e.path()));
        }
        if (by_method.empty()) throw mpcs::DataError("no report JSONs under " + *tables_dir);
        mpcs::render_tables(run.dir() / "tables.csv", run.dir() / "tables.txt", by_method, layout);
        run.add_artifact("tables", run.dir() / "tables.csv");
        std::cout << "tables for " << by_method.size() << " methods -> " << run.dir() << "\n";
    }

    if (data && ckpt_path) {
        run.set("data_hash", hash_tree(*data));
        const auto ingest = mpcs::ingest_layout(*data);
        const mpcs::Checkpoint ckpt = mpcs::Checkpoint::load(*ckpt_path);
        auto enc = mpcs::encoder_from_checkpoint(ckpt);
        const int input_size = ckpt.manifest.at("config").at("input_size").get<int>();

        std::set<std::string> ids;
        if (plan_path && fold)
            ids = mpcs::SplitPlan::load(*plan_path).fold_specimens(*fold);
        else
            for (const auto& s : ingest.samples) ids.insert(s.specimen_id);

        std::ostringstream tag;
        tag << std::hex << mpcs::params_hash(enc->net);
        const auto dump = mpcs::export_features(*enc, ingest.samples, ids, input_size, tag.str());
        mpcs::write_features_csv(run.dir() / "features.csv", dump);
        mpcs::write_projection_csv(run.dir() / "projection.csv", dump, mpcs::pca_project(dump));
        run.add_artifact("features", run.dir() / "features.csv");
        run.add_artifact("projection", run.dir() / "projection.csv");
        std::cout << "features: " << dump.rows.size() << " rows (d=" << dump.dim << ")\n";

        if (cam_count > 0 && ckpt.tensors.count("classifier/cls_fc/w")) {
            mpcs::ClassifierHead cls = classifier_from_checkpoint(ckpt, *enc);
            int made = 0;
            for (const auto& s : ingest.samples) {
                if (made >= cam_count) break;
                if (!ids.count(s.specimen_id)) continue;
                const mpcs::Magnification m = mpcs::Magnification::x400;
                const mpcs::ImageF img = mpcs::to_float(s.images.at(m));
                const auto cam = mpcs::grad_cam(*enc, cls, img, s.label(), cam_layer,
                                                s.specimen_id + "_" + mpcs::to_string(m));
                const std::string base = "cam_" + s.specimen_id + "_" + mpcs::to_string(m);
                mpcs::save_png(run.dir() / (base + ".png"), cam.overlay);
                mpcs::save_npy(run.dir() / (base + ".npy"), cam.map);
                ++made;
            }
            std::cout << "grad-cam overlays: " << made << " (layer " << cam_layer << ")\n";
        } else if (cam_count > 0) {
            std::cout << "grad-cam skipped: checkpoint has no classifier head\n";
        }
    }
    run.finalize("ok");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Magnification-prior contrastive pre-training pipeline"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    auto add_override = [](CLI::App* cmd, const char* flag, const char* help, CommonOpts& common,
                           std::function<void(json&, const std::string&)> apply) {
        cmd->add_option_function<std::string>(
            flag, [&common, apply](const std::string& v) { apply(common.overrides, v); }, help);
    };

    auto add_train_flags = [&](CLI::App* cmd, CommonOpts& common) {
        add_override(cmd, "--seed", "global seed", common,
                     [](json& o, const std::string& v) { o["seed"] = std::stoull(v); });
        add_override(cmd, "--strategy", "pair sampling: fixed|ordered|random", common,
                     [](json& o, const std::string& v) { o["sampler"]["kind"] = v; });
        add_override(cmd, "--encoder", "encoder name", common,
                     [](json& o, const std::string& v) { o["encoder"]["name"] = v; });
        add_override(cmd, "--epochs", "epoch count", common, [](json& o, const std::string& v) {
            o["pretrain"]["epochs"] = std::stoi(v);
            o["finetune"]["epochs"] = std::stoi(v);
        });
        add_override(cmd, "--lr", "learning rate", common, [](json& o, const std::string& v) {
            o["pretrain"]["learning_rate"] = std::stod(v);
            o["finetune"]["learning_rate"] = std::stod(v);
        });
        add_override(cmd, "--batch", "batch size", common, [](json& o, const std::string& v) {
            o["pretrain"]["batch_size"] = std::stoi(v);
            o["finetune"]["batch_size"] = std::stoi(v);
        });
        add_override(cmd, "--input-size", "model input side", common,
                     [](json& o, const std::string& v) {
                         o["pretrain"]["input_size"] = std::stoi(v);
                         o["finetune"]["input_size"] = std::stoi(v);
                     });
        add_override(cmd, "--temperature", "NT-Xent temperature", common,
                     [](json& o, const std::string& v) { o["loss"]["temperature"] = std::stod(v); });
    };

    // synth
    CommonOpts synth_common;
    std::string synth_out;
    int synth_specimens = 16, synth_patients = 8, synth_base = 640, synth_imgsize = 96;
    double synth_balance = 0.5;
    uint64_t synth_seed = 7;
    auto* synth = app.add_subcommand("synth", "generate the synthetic multi-magnification dataset");
    synth->add_option("--out", synth_out, "output dataset directory")->required();
    synth->add_option("--specimens", synth_specimens, "specimen count");
    synth->add_option("--patients", synth_patients, "patient count");
    synth->add_option("--balance", synth_balance, "malignant fraction in (0,1)");
    synth->add_option("--base", synth_base, "canvas size (>= 640)");
    synth->add_option("--imgsize", synth_imgsize, "written image side");
    synth->add_option("--seed", synth_seed, "generator seed");
    add_common(synth, synth_common);

    // pretrain
    CommonOpts pre_common;
    std::string pre_data;
    std::optional<std::string> pre_out_ckpt;
    auto* pre = app.add_subcommand("pretrain", "MPCS self-supervised pre-training");
    pre->add_option("--data", pre_data, "dataset root")->required();
    pre->add_option("--out-ckpt", pre_out_ckpt, "checkpoint output path");
    add_common(pre, pre_common);
    add_train_flags(pre, pre_common);
    add_override(pre, "--optimizer", "adam|lars", pre_common,
                 [](json& o, const std::string& v) { o["pretrain"]["optimizer"] = v; });
    add_override(pre, "--ckpt-every", "periodic checkpoint interval (epochs)", pre_common,
                 [](json& o, const std::string& v) {
                     o["pretrain"]["checkpoint_every"] = std::stoi(v);
                 });

    // finetune / lineval
    CommonOpts ft_common, lin_common;
    std::string ft_data, lin_data;
    std::optional<std::string> ft_ckpt, ft_plan, lin_ckpt, lin_plan;
    int ft_fold = 0, lin_fold = 0;
    auto add_ft_flags = [&](CLI::App* cmd, CommonOpts& common, std::string& data,
                            std::optional<std::string>& ckpt, std::optional<std::string>& plan,
                            int& fold) {
        cmd->add_option("--data", data, "dataset root")->required();
        cmd->add_option("--ckpt", ckpt, "pre-trained checkpoint (omit for random init)");
        cmd->add_option("--plan", plan, "split plan JSON (default: build from data)");
        cmd->add_option("--fold", fold, "test fold index");
        add_common(cmd, common);
        add_train_flags(cmd, common);
        add_override(cmd, "--fraction", "label fraction in (0,1]", common,
                     [](json& o, const std::string& v) {
                         o["finetune"]["label_fraction"] = std::stod(v);
                     });
        add_override(cmd, "--mf", "train/eval magnification: 40|100|200|400|all", common,
                     [](json& o, const std::string& v) { o["finetune"]["magnification"] = v; });
        add_override(cmd, "--dropout", "classifier dropout", common,
                     [](json& o, const std::string& v) { o["finetune"]["dropout"] = std::stod(v); });
    };
    auto* ft = app.add_subcommand("finetune", "supervised fine-tuning on a fold");
    add_ft_flags(ft, ft_common, ft_data, ft_ckpt, ft_plan, ft_fold);
    add_override(ft, "--mode", "full|linear", ft_common,
                 [](json& o, const std::string& v) { o["finetune"]["mode"] = v; });
    auto* lin = app.add_subcommand("lineval", "linear evaluation (frozen encoder)");
    add_ft_flags(lin, lin_common, lin_data, lin_ckpt, lin_plan, lin_fold);

    // eval
    CommonOpts ev_common;
    std::string ev_data, ev_ckpt, ev_mf = "all";
    std::optional<std::string> ev_plan;
    std::optional<int> ev_fold;
    int ev_patch = 0, ev_stride = 0;
    auto* ev = app.add_subcommand("eval", "evaluate a fine-tuned checkpoint");
    ev->add_option("--data", ev_data, "dataset root")->required();
    ev->add_option("--ckpt", ev_ckpt, "fine-tuned checkpoint")->required();
    ev->add_option("--plan", ev_plan, "split plan JSON");
    ev->add_option("--fold", ev_fold, "fold whose test set to evaluate");
    ev->add_option("--mf", ev_mf, "magnification filter");
    ev->add_option("--patches", ev_patch, "patch size for patch-wise eval (0: whole image)");
    ev->add_option("--stride", ev_stride, "patch stride (default: patch size)");
    add_common(ev, ev_common);

    // sweep
    CommonOpts sw_common;
    std::string sw_data, sw_fractions = "0.05,0.10,0.20,0.40,0.60,0.80,1.00";
    std::optional<std::string> sw_ckpt, sw_plan;
    int sw_fold = 0;
    auto* sw = app.add_subcommand("sweep", "label-efficiency sweep over fractions");
    sw->add_option("--data", sw_data, "dataset root")->required();
    sw->add_option("--ckpt", sw_ckpt, "pre-trained checkpoint");
    sw->add_option("--plan", sw_plan, "split plan JSON");
    sw->add_option("--fold", sw_fold, "test fold index");
    sw->add_option("--fractions", sw_fractions, "comma-separated fractions");
    add_common(sw, sw_common);
    add_train_flags(sw, sw_common);
    add_override(sw, "--mode", "full|linear", sw_common,
                 [](json& o, const std::string& v) { o["finetune"]["mode"] = v; });

    // xmag
    CommonOpts xm_common;
    std::optional<std::string> xm_reports, xm_data, xm_ckpt, xm_plan;
    int xm_fold = 0;
    auto* xm = app.add_subcommand("xmag", "cross-magnification evaluation (type 1 and 2)");
    xm->add_option("--reports", xm_reports, "directory with the 16 xmag report JSONs");
    xm->add_option("--data", xm_data, "dataset root (run mode)");
    xm->add_option("--ckpt", xm_ckpt, "pre-trained checkpoint (run mode)");
    xm->add_option("--plan", xm_plan, "split plan JSON");
    xm->add_option("--fold", xm_fold, "test fold index");
    add_common(xm, xm_common);
    add_train_flags(xm, xm_common);

    // report
    CommonOpts rp_common;
    std::optional<std::string> rp_data, rp_ckpt, rp_plan, rp_tables;
    std::optional<int> rp_fold;
    std::string rp_layer = "conv4", rp_layout = "breakhis";
    int rp_cams = 4;
    auto* rp = app.add_subcommand("report", "feature dumps, 2-D projection, grad-cam, tables");
    rp->add_option("--data", rp_data, "dataset root");
    rp->add_option("--ckpt", rp_ckpt, "checkpoint for features/CAM");
    rp->add_option("--plan", rp_plan, "split plan JSON");
    rp->add_option("--fold", rp_fold, "restrict to this fold's test set");
    rp->add_option("--cam-layer", rp_layer, "conv layer for grad-cam");
    rp->add_option("--cam-count", rp_cams, "number of CAM overlays");
    rp->add_option("--tables", rp_tables, "directory of report JSONs to tabulate");
    rp->add_option("--layout", rp_layout, "table layout: breakhis|bach|bisque");
    add_common(rp, rp_common);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << app.help() << "\n";
        return 2;
    }

    try {
        if (synth->parsed())
            return cmd_synth(synth_common, synth_out, synth_specimens, synth_patients,
                             synth_balance, synth_base, synth_imgsize, synth_seed);
        if (pre->parsed()) return cmd_pretrain(pre_common, pre_data, pre_out_ckpt);
        if (ft->parsed()) return cmd_finetune(ft_common, ft_data, ft_ckpt, ft_plan, ft_fold, false);
        if (lin->parsed())
            return cmd_finetune(lin_common, lin_data, lin_ckpt, lin_plan, lin_fold, true);
        if (ev->parsed())
            return cmd_eval(ev_common, ev_data, ev_ckpt, ev_plan, ev_fold, ev_mf, ev_patch,
                            ev_stride);
        if (sw->parsed())
            return cmd_sweep(sw_common, sw_data, sw_ckpt, sw_plan, sw_fold, sw_fractions);
        if (xm->parsed()) return cmd_xmag(xm_common, xm_reports, xm_data, xm_ckpt, xm_plan, xm_fold);
        if (rp->parsed())
            return cmd_report(rp_common, rp_data, rp_ckpt, rp_plan, rp_fold, rp_layer, rp_cams,
                              rp_tables, rp_layout);
    } catch (const mpcs::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
