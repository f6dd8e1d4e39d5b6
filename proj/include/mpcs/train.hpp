#pragma once

#include <filesystem>
#include <set>

#include "mpcs/config.hpp"
#include "mpcs/dataset.hpp"
#include "mpcs/eval.hpp"
#include "mpcs/model.hpp"

namespace mpcs {

// Records every specimen id that enters a training batch and counts hits
// against a forbidden (test-fold) set.
class LeakageMonitor {
public:
    void forbid(const std::set<std::string>& ids) { forbidden_ = ids; }
    void record(const std::string& specimen_id) {
        seen_.insert(specimen_id);
        if (forbidden_.count(specimen_id)) ++violations_;
    }
    int violations() const { return violations_; }
    const std::set<std::string>& seen() const { return seen_; }

private:
    std::set<std::string> forbidden_;
    std::set<std::string> seen_;
    int violations_ = 0;
};

// Appends one JSON object per line; the {epoch, split, loss, ila, pla} log.
class MetricLog {
public:
    MetricLog() = default;
    explicit MetricLog(const std::filesystem::path& path) : path_(path) {}
    void append(const nlohmann::json& row);
    const std::vector<nlohmann::json>& rows() const { return rows_; }

private:
    std::filesystem::path path_;
    std::vector<nlohmann::json> rows_;
};

// (n, 3, S, S) planar batch from interleaved images; pixels mapped to [-1, 1].
Tensor images_to_batch(const std::vector<const ImageF*>& views);

double softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels, Tensor& grad);
std::vector<double> softmax_row(const Tensor& logits, int row);

struct PretrainOutcome {
    Checkpoint checkpoint;
    std::vector<double> epoch_losses;
    int64_t label_reads = 0;  // accessor hits during the run; must stay zero
};

// MPCS self-supervised pre-training: per epoch, seeded shuffle, pair
// sampling via the strategy, one uniform transform per pair, encoder +
// projection head, NT-Xent. Labels are never touched; the accessor counter
// is checked at the end of every run.
PretrainOutcome pretrain(const PretrainConfig& cfg, const std::vector<MagnifiedSample>& samples,
                         MetricLog* log = nullptr,
                         const std::filesystem::path& checkpoint_dir = {});

std::unique_ptr<EncoderAdapter> encoder_from_checkpoint(const Checkpoint& ckpt);

struct FinetuneOutcome {
    Checkpoint checkpoint;
    EvalReport test_report;
    std::vector<PredictionRecord> test_predictions;
    double best_val_ila = 0.0;
    int best_epoch = -1;
    int leakage_violations = 0;
    uint64_t encoder_hash_before = 0;
    uint64_t encoder_hash_after = 0;
};

// Supervised fine-tuning (mode full) or linear evaluation (mode linear,
// frozen encoder). Test fold held out; one train fold reserved for
// validation / early stopping by validation ILA.
FinetuneOutcome finetune(const FinetuneConfig& cfg, const Checkpoint* init, const SplitPlan& plan,
                         int fold, const std::vector<MagnifiedSample>& samples,
                         MetricLog* log = nullptr);

std::vector<PredictionRecord> predict(EncoderAdapter& enc, ClassifierHead& cls,
                                      const std::vector<MagnifiedSample>& samples,
                                      const std::set<std::string>& specimen_ids,
                                      const std::string& magnification, int input_size);

struct PatchwiseEval {
    std::vector<PredictionRecord> patch_predictions;
    std::vector<PredictionRecord> image_predictions;  // one per image, majority-voted
    double patch_accuracy = 0.0;
    double image_accuracy = 0.0;
};

// Tile each selected image into patches, classify every patch, then majority
// vote per image (the BACH-style protocol).
PatchwiseEval evaluate_patchwise(EncoderAdapter& enc, ClassifierHead& cls,
                                 const std::vector<MagnifiedSample>& samples,
                                 const std::set<std::string>& specimen_ids,
                                 const std::string& magnification, int input_size, int patch_size,
                                 int stride);

struct CrossValidationOutcome {
    std::vector<EvalReport> fold_reports;
    nlohmann::json aggregate;  // mean and std per metric
};

CrossValidationOutcome cross_validate(const FinetuneConfig& cfg, const Checkpoint* init,
                                      const SplitPlan& plan,
                                      const std::vector<MagnifiedSample>& samples,
                                      MetricLog* log = nullptr);

nlohmann::json aggregate_reports(const std::vector<EvalReport>& reports);

}  // namespace mpcs
