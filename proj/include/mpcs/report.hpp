#pragma once

#include <array>

#include "mpcs/eval.hpp"
#include "mpcs/model.hpp"
#include "mpcs/train.hpp"

namespace mpcs {

struct FeatureRow {
    std::string specimen_id;
    Magnification magnification = Magnification::x40;
    int label = 0;
    std::vector<double> features;
};

struct FeatureDump {
    std::vector<FeatureRow> rows;
    std::string encoder_id;  // checkpoint hash tag
    int dim = 0;
};

// One row per (specimen, magnification); eval mode, resize only.
FeatureDump export_features(EncoderAdapter& enc, const std::vector<MagnifiedSample>& samples,
                            const std::set<std::string>& specimen_ids, int input_size,
                            const std::string& encoder_id);

void write_features_csv(const std::filesystem::path& path, const FeatureDump& dump);

// Top-2 principal components; the bundled 2-D projector for the qualitative
// separability figure.
std::vector<std::array<double, 2>> pca_project(const FeatureDump& dump);
void write_projection_csv(const std::filesystem::path& path, const FeatureDump& dump,
                          const std::vector<std::array<double, 2>>& projection);

struct ActivationMap {
    std::string source_image_id;
    int target_class = 0;
    Tensor map;       // (H', W') in [0, 1]; conv-layer spatial dims
    ImageU8 overlay;  // heatmap blended over the input
};

// Gradient-weighted class activation map: channel weights are the spatial
// means of d(logit_c)/dA_k, the map is the rectified weighted channel sum,
// min-max normalized (an all-zero map stays all-zero).
ActivationMap grad_cam(EncoderAdapter& enc, ClassifierHead& cls, const ImageF& image,
                       int target_class, const std::string& layer_name,
                       const std::string& image_id = {});

void save_npy(const std::filesystem::path& path, const Tensor& map2d);

// method x magnification grid with mean+-std cells (ILA), CSV plus aligned
// text. layout tags the dataset convention in the header.
void render_tables(const std::filesystem::path& csv_path, const std::filesystem::path& txt_path,
                   const std::map<std::string, std::vector<EvalReport>>& reports_by_method,
                   const std::string& layout);

}  // namespace mpcs
