#pragma once

#include <functional>
#include <map>
#include <optional>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mpcs/dataset.hpp"

namespace mpcs {

struct PredictionRecord {
    std::string specimen_id;
    std::string patient_id;
    Magnification magnification = Magnification::x40;
    std::optional<std::pair<int, int>> patch_coord;  // (row, col) for patch records
    int true_label = 0;
    int predicted_label = 0;
    std::vector<double> class_scores;  // sums to 1; argmax ties go to the lowest class id
};

int argmax_label(const std::vector<double>& scores);

struct MagnificationMetrics {
    double ila = 0.0;
    double pla = 0.0;
};

struct EvalReport {
    double ila = 0.0;
    double pla = 0.0;
    std::optional<double> patch_accuracy;
    std::optional<double> image_accuracy;
    std::map<int, MagnificationMetrics> per_magnification;  // keyed by the factor value
    int fold = -1;
    int n_images = 0;
    int n_patients = 0;

    nlohmann::json to_json() const;
    static EvalReport from_json(const nlohmann::json& j);
    void save(const std::filesystem::path& path) const;
    static EvalReport load(const std::filesystem::path& path);
};

double image_level_accuracy(const std::vector<PredictionRecord>& preds);

// Unweighted mean over patients of (correct images / images) per patient.
double patient_level_accuracy(const std::vector<PredictionRecord>& preds);

// Plurality vote over one image's patch records. Ties: highest mean class
// score among tied labels, then lowest class id. Returns the winning label
// and a synthesized image-level record (mean scores, no patch coord).
std::pair<int, PredictionRecord> majority_vote(const std::vector<PredictionRecord>& patch_preds);

EvalReport make_report(const std::vector<PredictionRecord>& preds, int fold = -1);

enum class CrossMagMode { Type1, Type2 };

// matrix key: (train factor, eval factor); all 16 combinations must be
// present, the diagonal is excluded by both modes.
std::map<int, MagnificationMetrics> cross_magnification(
    const std::map<std::pair<int, int>, EvalReport>& matrix, CrossMagMode mode);

// One fine-tune + evaluation per fraction (ascending), shared folds/seeds.
std::vector<std::pair<double, EvalReport>> label_efficiency_sweep(
    std::vector<double> fractions, const std::function<EvalReport(double)>& runner);

void write_predictions_csv(const std::filesystem::path& path,
                           const std::vector<PredictionRecord>& preds);
std::vector<PredictionRecord> read_predictions_csv(const std::filesystem::path& path);

void write_sweep_csv(const std::filesystem::path& path,
                     const std::vector<std::pair<double, EvalReport>>& rows);

}  // namespace mpcs
