#include "mpcs/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>

#include "mpcs/kernels.hpp"
#include "mpcs/loss.hpp"
#include "mpcs/optim.hpp"
#include "mpcs/sampler.hpp"
#include "mpcs/transforms.hpp"

namespace mpcs {

namespace {
constexpr uint64_t kInitStream = 0xA11Cu;
constexpr uint64_t kPretrainStream = 0xE70Cu;
constexpr uint64_t kFinetuneStream = 0xF17Eu;
}  // namespace

void MetricLog::append(const nlohmann::json& row) {
    rows_.push_back(row);
    if (path_.empty()) return;
    std::ofstream out(path_, std::ios::app);
    out << row.dump() << "\n";
}

Tensor images_to_batch(const std::vector<const ImageF*>& views) {
    if (views.empty()) throw DataError("empty batch");
    const int s = views.front()->h;
    Tensor x({static_cast<int>(views.size()), 3, s, s});
    for (size_t i = 0; i < views.size(); ++i) {
        const ImageF& img = *views[i];
        if (img.h != s || img.w != s) throw ShapeMismatchError("batch views must share one size");
        for (int y = 0; y < s; ++y)
            for (int xx = 0; xx < s; ++xx)
                for (int c = 0; c < 3; ++c)
                    x.at4(static_cast<int>(i), c, y, xx) = img.at(y, xx, c) * 2.0 - 1.0;
    }
    return x;
}

std::vector<double> softmax_row(const Tensor& logits, int row) {
    const int c = logits.dim(1);
    double maxv = -1e300;
    for (int j = 0; j < c; ++j) maxv = std::max(maxv, logits.at2(row, j));
    std::vector<double> out(static_cast<size_t>(c));
    double denom = 0.0;
    for (int j = 0; j < c; ++j) {
        out[static_cast<size_t>(j)] = std::exp(logits.at2(row, j) - maxv);
        denom += out[static_cast<size_t>(j)];
    }
    for (double& v : out) v /= denom;
    return out;
}

double softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels, Tensor& grad) {
    const int b = logits.dim(0), c = logits.dim(1);
    if (static_cast<int>(labels.size()) != b) throw ShapeMismatchError("label count != batch size");
    grad = Tensor({b, c});
    double total = 0.0;
    for (int i = 0; i < b; ++i) {
        double maxv = -1e300;
        for (int j = 0; j < c; ++j) maxv = std::max(maxv, logits.at2(i, j));
        double denom = 0.0;
        for (int j = 0; j < c; ++j) denom += std::exp(logits.at2(i, j) - maxv);
        const double lse = maxv + std::log(denom);
        total += lse - logits.at2(i, labels[static_cast<size_t>(i)]);
        for (int j = 0; j < c; ++j) {
            const double p = std::exp(logits.at2(i, j) - lse);
            grad.at2(i, j) = (p - (j == labels[static_cast<size_t>(i)] ? 1.0 : 0.0)) / b;
        }
    }
    return total / b;
}

// ---------------------------------------------------------------- pretrain

namespace {

double embedding_std(const Tensor& z) {
    const int n = z.dim(0), d = z.dim(1);
    double total_var = 0.0;
    for (int c = 0; c < d; ++c) {
        double mean = 0.0;
        for (int i = 0; i < n; ++i) mean += z.at2(i, c);
        mean /= n;
        double var = 0.0;
        for (int i = 0; i < n; ++i) var += (z.at2(i, c) - mean) * (z.at2(i, c) - mean);
        total_var += var / n;
    }
    return std::sqrt(total_var / d);
}

}  // namespace

PretrainOutcome pretrain(const PretrainConfig& cfg, const std::vector<MagnifiedSample>& samples,
                         MetricLog* log, const std::filesystem::path& checkpoint_dir) {
    cfg.validate();
    if (samples.empty()) throw EmptyDatasetError("EmptyDataset: nothing to pre-train on");
    for (const auto& s : samples)
        if (!s.complete())
            throw DataError("IncompleteSample: " + s.specimen_id + " lacks a magnification");

    const int64_t label_reads_before = instrumentation::label_reads();

    Rng init_rng = Rng::derive(cfg.seed, {kInitStream});
    auto enc = make_encoder(cfg.encoder, init_rng);
    ProjectionHead head = default_projection_head(*enc, init_rng, cfg.head_bias);

    std::vector<ParamTensor*> params = enc->net.params();
    for (ParamTensor* p : head.net.params()) params.push_back(p);
    auto opt = make_optimizer(cfg.optimizer, cfg.learning_rate);

    const int n = static_cast<int>(samples.size());
    PretrainOutcome outcome;
    int collapse_streak = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng rng = Rng::derive(cfg.seed, {kPretrainStream, static_cast<uint64_t>(epoch), 0});
        std::vector<int> order(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
        rng.shuffle(order);

        double epoch_loss = 0.0, epoch_std = 0.0;
        int steps = 0;
        for (int start = 0; start + cfg.batch_size <= n; start += cfg.batch_size) {
            std::vector<ViewPair> pairs;
            pairs.reserve(static_cast<size_t>(cfg.batch_size));
            for (int i = 0; i < cfg.batch_size; ++i) {
                const auto& sample = samples[static_cast<size_t>(order[static_cast<size_t>(start + i)])];
                ViewPair pair = sample_pair(cfg.strategy, sample, rng);
                const AugmentationParams params_draw = sample_params(cfg.policy, rng);
                pairs.push_back(apply_uniform(params_draw, pair));
            }
            std::vector<const ImageF*> views;
            std::vector<int> pair_of;
            for (const auto& p : pairs) {
                views.push_back(&p.view1);
                views.push_back(&p.view2);
                const int base = static_cast<int>(pair_of.size());
                pair_of.push_back(base + 1);
                pair_of.push_back(base);
            }
            const Tensor x = images_to_batch(views);
            enc->net.zero_grad();
            head.net.zero_grad();
            const Tensor h = enc->forward(x, Mode::Train, &rng);
            const Tensor z = head.forward(h, Mode::Train, &rng);

            ContrastiveBatch batch{z, pair_of, cfg.temperature, cfg.strict_exclusion};
            Tensor gz;
            const double loss = nt_xent_with_grad(batch, gz);
            const Tensor gh = head.backward(gz);
            enc->backward(gh);
            opt->step(params);

            epoch_loss += loss;
            epoch_std += embedding_std(z);
            ++steps;
        }
        if (steps == 0)
            throw ConfigError("batch_size " + std::to_string(cfg.batch_size) + " exceeds dataset size " +
                              std::to_string(n));
        const double mean_loss = epoch_loss / steps;
        const double mean_std = epoch_std / steps;
        outcome.epoch_losses.push_back(mean_loss);
        if (log) log->append({{"epoch", epoch}, {"split", "pretrain"}, {"loss", mean_loss}});

        collapse_streak = mean_std < 1e-6 ? collapse_streak + 1 : 0;
        if (collapse_streak >= 3)
            throw CollapseDetectedError(
                "CollapseDetected: embedding std below 1e-6 for 3 consecutive epochs (epoch " +
                std::to_string(epoch) + ")");

        if (cfg.checkpoint_every > 0 && !checkpoint_dir.empty() &&
            (epoch + 1) % cfg.checkpoint_every == 0 && epoch + 1 < cfg.epochs) {
            Checkpoint periodic;
            periodic.manifest = {{"kind", "pretrain"},
                                 {"epoch", epoch + 1},
                                 {"encoder", {{"name", enc->name}, {"feature_dim", enc->feature_dim}}},
                                 {"config", to_json(cfg)}};
            store_params(periodic, "encoder", enc->net);
            store_params(periodic, "projection", head.net);
            periodic.save(checkpoint_dir / ("ckpt_epoch" + std::to_string(epoch + 1) + ".mpcs"));
        }
    }

    outcome.label_reads = instrumentation::label_reads() - label_reads_before;
    if (outcome.label_reads != 0)
        throw Error("pretraining touched the label accessor " + std::to_string(outcome.label_reads) +
                    " times");

    Rng final_rng = Rng::derive(cfg.seed, {kPretrainStream, static_cast<uint64_t>(cfg.epochs), 0});
    outcome.checkpoint.manifest = {
        {"kind", "pretrain"},
        {"epoch", cfg.epochs},
        {"encoder", {{"name", enc->name}, {"feature_dim", enc->feature_dim}}},
        {"config", to_json(cfg)},
        {"loss_curve", outcome.epoch_losses},
        {"rng_state", final_rng.state_string()},
        {"label_reads", outcome.label_reads}};
    store_params(outcome.checkpoint, "encoder", enc->net);
    store_params(outcome.checkpoint, "projection", head.net);
    return outcome;
}

std::unique_ptr<EncoderAdapter> encoder_from_checkpoint(const Checkpoint& ckpt) {
    const std::string name = ckpt.manifest.at("encoder").at("name").get<std::string>();
    Rng dummy(0);
    auto enc = make_encoder(name, dummy);
    load_params(ckpt, "encoder", enc->net);
    enc->source = WeightsSource::Checkpoint;
    return enc;
}

// ----------------------------------------------------------------- predict

namespace {

std::vector<Magnification> magnifications_for(const std::string& selector) {
    if (selector == "all")
        return {kMagnifications.begin(), kMagnifications.end()};
    return {magnification_from_int(std::stoi(selector))};
}

Tensor features_for_images(EncoderAdapter& enc, const std::vector<const ImageF*>& views) {
    const Tensor x = images_to_batch(views);
    return enc.forward(x, Mode::Eval);
}

struct ImageRef {
    const MagnifiedSample* sample;
    Magnification mf;
};

std::vector<ImageRef> collect_images(const std::vector<MagnifiedSample>& samples,
                                     const std::set<std::string>& ids,
                                     const std::string& magnification) {
    const auto mags = magnifications_for(magnification);
    std::vector<ImageRef> out;
    for (const auto& s : samples) {
        if (!ids.count(s.specimen_id)) continue;
        for (Magnification m : mags) out.push_back({&s, m});
    }
    return out;
}

// identity transform: resize to the model input, nothing else
ImageF eval_view(const ImageU8& img, int input_size) {
    return kernels::resize_bilinear(to_float(img), input_size, input_size);
}

}  // namespace

std::vector<PredictionRecord> predict(EncoderAdapter& enc, ClassifierHead& cls,
                                      const std::vector<MagnifiedSample>& samples,
                                      const std::set<std::string>& specimen_ids,
                                      const std::string& magnification, int input_size) {
    const auto refs = collect_images(samples, specimen_ids, magnification);
    std::vector<PredictionRecord> preds;
    preds.reserve(refs.size());
    constexpr int kChunk = 32;
    for (size_t start = 0; start < refs.size(); start += kChunk) {
        const size_t end = std::min(refs.size(), start + kChunk);
        std::vector<ImageF> views;
        views.reserve(end - start);
        for (size_t i = start; i < end; ++i)
            views.push_back(eval_view(refs[i].sample->images.at(refs[i].mf), input_size));
        std::vector<const ImageF*> ptrs;
        for (const auto& v : views) ptrs.push_back(&v);
        const Tensor h = features_for_images(enc, ptrs);
        const Tensor logits = cls.forward(h, Mode::Eval);
        for (size_t i = start; i < end; ++i) {
            PredictionRecord rec;
            rec.specimen_id = refs[i].sample->specimen_id;
            rec.patient_id = refs[i].sample->patient_id;
            rec.magnification = refs[i].mf;
            rec.true_label = refs[i].sample->label();
            rec.class_scores = softmax_row(logits, static_cast<int>(i - start));
            rec.predicted_label = argmax_label(rec.class_scores);
            preds.push_back(std::move(rec));
        }
    }
    return preds;
}

// ---------------------------------------------------------------- finetune

namespace {

std::vector<Tensor> snapshot_params(const std::vector<ParamTensor*>& params) {
    std::vector<Tensor> out;
    out.reserve(params.size());
    for (ParamTensor* p : params) out.push_back(p->value);
    return out;
}

void restore_params(const std::vector<ParamTensor*>& params, const std::vector<Tensor>& snap) {
    for (size_t i = 0; i < params.size(); ++i) params[i]->value = snap[i];
}

double eval_ila(EncoderAdapter& enc, ClassifierHead& cls, const std::vector<MagnifiedSample>& samples,
                const std::set<std::string>& ids, const std::string& magnification, int input_size) {
    const auto preds = predict(enc, cls, samples, ids, magnification, input_size);
    return image_level_accuracy(preds);
}

}  // namespace

FinetuneOutcome finetune(const FinetuneConfig& cfg, const Checkpoint* init, const SplitPlan& plan,
                         int fold, const std::vector<MagnifiedSample>& samples, MetricLog* log) {
    cfg.validate();
    if (fold < 0 || fold >= plan.k)
        throw ConfigError("fold " + std::to_string(fold) + " outside [0," + std::to_string(plan.k) + ")");

    const int val_fold = (fold + 1) % plan.k;
    std::set<int> train_folds;
    for (int f = 0; f < plan.k; ++f)
        if (f != fold && f != val_fold) train_folds.insert(f);

    const std::set<std::string> labeled =
        subsample_labels(plan, samples, train_folds, cfg.label_fraction, cfg.seed);
    if (labeled.empty()) throw DataError("EmptyLabelSubset: no labeled specimens left");
    const std::set<std::string> val_ids = plan.fold_specimens(val_fold);
    const std::set<std::string> test_ids = plan.fold_specimens(fold);

    LeakageMonitor monitor;
    monitor.forbid(test_ids);

    Rng init_rng = Rng::derive(cfg.seed, {kInitStream, 1});
    std::unique_ptr<EncoderAdapter> enc =
        init ? encoder_from_checkpoint(*init) : make_encoder(cfg.encoder, init_rng);
    ClassifierHead cls = ClassifierHead::build(enc->feature_dim, cfg.n_classes, cfg.dropout, init_rng);

    FinetuneOutcome outcome;
    outcome.encoder_hash_before = params_hash(enc->net);

    const auto train_refs = collect_images(samples, labeled, cfg.magnification);
    if (train_refs.empty()) throw DataError("EmptyLabelSubset: no training images");

    const bool linear = cfg.mode == FinetuneConfig::Mode::Linear;
    std::vector<ParamTensor*> trainable = cls.net.params();
    if (!linear)
        for (ParamTensor* p : enc->net.params()) trainable.push_back(p);
    auto opt = make_optimizer("adam", cfg.learning_rate);

    // Frozen-encoder path: features are computed once and the head trains on
    // them; the encoder is never touched again.
    Tensor train_features;
    std::vector<int> train_labels(train_refs.size());
    if (linear) {
        std::vector<ImageF> views;
        views.reserve(train_refs.size());
        for (const auto& r : train_refs) {
            monitor.record(r.sample->specimen_id);
            views.push_back(eval_view(r.sample->images.at(r.mf), cfg.input_size));
        }
        std::vector<const ImageF*> ptrs;
        for (const auto& v : views) ptrs.push_back(&v);
        train_features = features_for_images(*enc, ptrs);
    }
    for (size_t i = 0; i < train_refs.size(); ++i)
        train_labels[i] = train_refs[i].sample->label();

    double best_val = -1.0;
    int best_epoch = -1;
    std::vector<Tensor> best_state;
    const int n_train = static_cast<int>(train_refs.size());

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng rng = Rng::derive(cfg.seed, {kFinetuneStream, static_cast<uint64_t>(epoch), 0});
        std::vector<int> order(static_cast<size_t>(n_train));
        for (int i = 0; i < n_train; ++i) order[static_cast<size_t>(i)] = i;
        rng.shuffle(order);

        double epoch_loss = 0.0;
        int steps = 0;
        for (int start = 0; start < n_train; start += cfg.batch_size) {
            const int bsz = std::min(cfg.batch_size, n_train - start);
            std::vector<int> batch_labels(static_cast<size_t>(bsz));
            Tensor h;
            if (linear) {
                h = Tensor({bsz, enc->feature_dim});
                for (int i = 0; i < bsz; ++i) {
                    const int idx = order[static_cast<size_t>(start + i)];
                    for (int c = 0; c < enc->feature_dim; ++c) h.at2(i, c) = train_features.at2(idx, c);
                    batch_labels[static_cast<size_t>(i)] = train_labels[static_cast<size_t>(idx)];
                }
            } else {
                std::vector<ImageF> views;
                views.reserve(static_cast<size_t>(bsz));
                for (int i = 0; i < bsz; ++i) {
                    const int idx = order[static_cast<size_t>(start + i)];
                    const auto& r = train_refs[static_cast<size_t>(idx)];
                    monitor.record(r.sample->specimen_id);
                    const AugmentationParams params_draw = sample_params(cfg.policy, rng);
                    views.push_back(apply_transform(params_draw, to_float(r.sample->images.at(r.mf))));
                    batch_labels[static_cast<size_t>(i)] = train_labels[static_cast<size_t>(idx)];
                }
                std::vector<const ImageF*> ptrs;
                for (const auto& v : views) ptrs.push_back(&v);
                enc->net.zero_grad();
                h = enc->forward(images_to_batch(ptrs), Mode::Train, &rng);
            }
            cls.net.zero_grad();
            const Tensor logits = cls.forward(h, Mode::Train, &rng);
            Tensor glogits;
            const double loss = softmax_cross_entropy(logits, batch_labels, glogits);
            const Tensor gh = cls.backward(glogits);
            if (!linear) enc->backward(gh);
            opt->step(trainable);
            epoch_loss += loss;
            ++steps;
        }

        const double val_ila =
            eval_ila(*enc, cls, samples, val_ids, cfg.magnification, cfg.input_size);
        if (log)
            log->append({{"epoch", epoch},
                         {"split", "val"},
                         {"loss", epoch_loss / std::max(1, steps)},
                         {"ila", val_ila}});
        if (val_ila > best_val) {
            best_val = val_ila;
            best_epoch = epoch;
            best_state = snapshot_params(trainable);
        } else if (epoch - best_epoch >= cfg.patience) {
            break;
        }
    }
    if (!best_state.empty()) restore_params(trainable, best_state);

    outcome.encoder_hash_after = params_hash(enc->net);
    if (linear && outcome.encoder_hash_before != outcome.encoder_hash_after)
        throw Error("linear evaluation modified the frozen encoder");

    outcome.best_val_ila = best_val;
    outcome.best_epoch = best_epoch;
    outcome.leakage_violations = monitor.violations();
    outcome.test_predictions =
        predict(*enc, cls, samples, test_ids, cfg.magnification, cfg.input_size);
    outcome.test_report = make_report(outcome.test_predictions, fold);
    if (log)
        log->append({{"epoch", best_epoch},
                     {"split", "test"},
                     {"ila", outcome.test_report.ila},
                     {"pla", outcome.test_report.pla}});

    outcome.checkpoint.manifest = {{"kind", "finetune"},
                                   {"fold", fold},
                                   {"config", to_json(cfg)},
                                   {"encoder", {{"name", enc->name}, {"feature_dim", enc->feature_dim}}},
                                   {"best_epoch", best_epoch},
                                   {"best_val_ila", best_val},
                                   {"init", init ? "checkpoint" : "random"}};
    store_params(outcome.checkpoint, "encoder", enc->net);
    store_params(outcome.checkpoint, "classifier", cls.net);
    return outcome;
}

PatchwiseEval evaluate_patchwise(EncoderAdapter& enc, ClassifierHead& cls,
                                 const std::vector<MagnifiedSample>& samples,
                                 const std::set<std::string>& specimen_ids,
                                 const std::string& magnification, int input_size, int patch_size,
                                 int stride) {
    const auto refs = collect_images(samples, specimen_ids, magnification);
    PatchwiseEval out;
    for (const auto& r : refs) {
        const PatchGrid grid = make_patches(r.sample->images.at(r.mf), patch_size, stride,
                                            r.sample->specimen_id + "_" + to_string(r.mf));
        std::vector<ImageF> views;
        views.reserve(grid.patches.size());
        for (const auto& patch : grid.patches)
            views.push_back(eval_view(patch.image, input_size));
        std::vector<const ImageF*> ptrs;
        for (const auto& v : views) ptrs.push_back(&v);
        const Tensor h = features_for_images(enc, ptrs);
        const Tensor logits = cls.forward(h, Mode::Eval);

        std::vector<PredictionRecord> patch_recs;
        for (size_t i = 0; i < grid.patches.size(); ++i) {
            PredictionRecord rec;
            rec.specimen_id = r.sample->specimen_id;
            rec.patient_id = r.sample->patient_id;
            rec.magnification = r.mf;
            rec.patch_coord = {grid.patches[i].row, grid.patches[i].col};
            rec.true_label = r.sample->label();
            rec.class_scores = softmax_row(logits, static_cast<int>(i));
            rec.predicted_label = argmax_label(rec.class_scores);
            patch_recs.push_back(rec);
        }
        const auto [label, image_rec] = majority_vote(patch_recs);
        (void)label;
        out.image_predictions.push_back(image_rec);
        out.patch_predictions.insert(out.patch_predictions.end(), patch_recs.begin(),
                                     patch_recs.end());
    }
    if (!out.patch_predictions.empty()) {
        out.patch_accuracy = image_level_accuracy(out.patch_predictions);
        out.image_accuracy = image_level_accuracy(out.image_predictions);
    }
    return out;
}

nlohmann::json aggregate_reports(const std::vector<EvalReport>& reports) {
    auto stats = [&](auto getter) {
        double mean = 0.0;
        for (const auto& r : reports) mean += getter(r);
        mean /= static_cast<double>(reports.size());
        double var = 0.0;
        for (const auto& r : reports) var += (getter(r) - mean) * (getter(r) - mean);
        var /= static_cast<double>(reports.size());
        return nlohmann::json{{"mean", mean}, {"std", std::sqrt(var)}};
    };
    nlohmann::json agg;
    agg["ila"] = stats([](const EvalReport& r) { return r.ila; });
    agg["pla"] = stats([](const EvalReport& r) { return r.pla; });
    agg["n_folds"] = reports.size();
    return agg;
}

CrossValidationOutcome cross_validate(const FinetuneConfig& cfg, const Checkpoint* init,
                                      const SplitPlan& plan,
                                      const std::vector<MagnifiedSample>& samples, MetricLog* log) {
    CrossValidationOutcome out;
    for (int fold = 0; fold < plan.k; ++fold) {
        FinetuneOutcome fo = finetune(cfg, init, plan, fold, samples, log);
        out.fold_reports.push_back(fo.test_report);
    }
    out.aggregate = aggregate_reports(out.fold_reports);
    return out;
}

}  // namespace mpcs
