#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mpcs/common.hpp"
#include "mpcs/image.hpp"
#include "mpcs/instrumentation.hpp"
#include "mpcs/rng.hpp"

namespace mpcs {

// The four supported optical magnification factors.
enum class Magnification : int { x40 = 40, x100 = 100, x200 = 200, x400 = 400 };

constexpr std::array<Magnification, 4> kMagnifications = {
    Magnification::x40, Magnification::x100, Magnification::x200, Magnification::x400};

constexpr int to_int(Magnification m) { return static_cast<int>(m); }
std::string to_string(Magnification m);        // "40" .. "400"
std::string to_dirname(Magnification m);       // "40X" .. "400X"
Magnification magnification_from_int(int v);   // throws ConfigError

// One specimen's co-registered images at all four magnifications. The label
// accessor is instrumented; pretraining must never trip the counter.
class MagnifiedSample {
public:
    MagnifiedSample() = default;
    MagnifiedSample(std::string specimen_id, std::string patient_id, int label)
        : specimen_id(std::move(specimen_id)), patient_id(std::move(patient_id)), label_(label) {}

    std::string specimen_id;
    std::string patient_id;
    std::map<Magnification, ImageU8> images;
    std::map<Magnification, std::filesystem::path> source_path;

    int label() const {
        instrumentation::count_label_read();
        return label_;
    }
    bool complete() const { return images.size() == kMagnifications.size(); }

private:
    int label_ = -1;
};

struct IngestWarning {
    std::string specimen_id;
    std::string message;
};

struct IngestResult {
    std::vector<MagnifiedSample> samples;
    std::vector<IngestWarning> warnings;
    std::vector<std::string> class_names;  // index == class id, lexicographic
};

// Layout: root/<class_name>/<patient_id>/<specimen_id>/<MF>X/<image>.png
IngestResult ingest_layout(const std::filesystem::path& root);

struct SyntheticConfig {
    int n_specimens = 8;
    int n_patients = 4;
    double class_balance = 0.5;  // fraction of specimens that are malignant
    int base_size = 640;         // canvas resolution the views are cut from
    int out_size = 96;           // written image side
    uint64_t seed = 0;
};

// Class-conditional texture model: both classes plant a nucleus-blob cluster
// on a stained-tissue canvas; malignant clusters are dense/high-contrast,
// benign sparse/low-contrast, with matched total ink so the class signal is
// structural rather than a mean-intensity offset. A per-specimen stain
// nuisance (brightness/tint) spans more variation than the class effect.
// The 40x view is the whole canvas; deeper factors are crops around the
// cluster, so the planted region is visible at every magnification.
// If out_dir is non-empty, writes the ingest layout plus masks/ and
// index.json under it.
std::vector<MagnifiedSample> generate_synthetic(const SyntheticConfig& cfg,
                                                const std::filesystem::path& out_dir = {});

// Verification masks of the planted cluster, keyed like the images.
std::map<Magnification, MaskU8> synthetic_masks(const SyntheticConfig& cfg, int specimen_index);

struct Patch {
    int row = 0;
    int col = 0;
    ImageU8 image;
};

struct PatchGrid {
    std::string parent_image_id;
    int patch_size = 0;
    int stride = 0;
    std::vector<Patch> patches;  // row-major
};

PatchGrid make_patches(const ImageU8& image, int patch_size, int stride,
                       const std::string& parent_image_id = {});

// Closed-form patch count along one axis.
constexpr int patch_count_1d(int extent, int patch_size, int stride) {
    return (extent - patch_size) / stride + 1;
}

struct SplitPlan {
    int k = 5;
    uint64_t seed = 0;
    std::map<std::string, int> fold_of;  // specimen_id -> fold
    // Canonical nested label subsets over all specimens, keyed by the
    // fraction formatted with two decimals ("0.05" .. "1.00").
    std::map<std::string, std::vector<std::string>> label_fractions;

    std::set<std::string> fold_specimens(int fold) const;
    std::set<std::string> specimens_excluding_fold(int fold) const;

    void save(const std::filesystem::path& path) const;
    static SplitPlan load(const std::filesystem::path& path);
};

constexpr std::array<double, 7> kLabelFractions = {0.05, 0.10, 0.20, 0.40, 0.60, 0.80, 1.00};

std::string fraction_key(double fraction);

// Patient-grouped stratified folds; every specimen of a patient lands in one
// fold, patients stratified by their majority class.
SplitPlan build_folds(const std::vector<MagnifiedSample>& samples, int k = 5, uint64_t seed = 0);

// Stratified nested label subsets restricted to the given train folds.
// Same seed + larger fraction always yields a superset.
std::set<std::string> subsample_labels(const SplitPlan& plan,
                                       const std::vector<MagnifiedSample>& samples,
                                       const std::set<int>& train_folds, double fraction,
                                       uint64_t seed);

const MagnifiedSample& find_specimen(const std::vector<MagnifiedSample>& samples,
                                     const std::string& specimen_id);

}  // namespace mpcs
