#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "json.hpp"
#include "mpcs/sampler.hpp"
#include "mpcs/transforms.hpp"

namespace mpcs {

// Layered run configuration: defaults <- preset <- config file <- flag
// overrides, later layers win. The fully resolved document is what lands in
// the run manifest.
nlohmann::json default_config();
nlohmann::json preset_config(const std::string& name);  // throws ConfigError on unknown preset
nlohmann::json resolve_config(const std::optional<std::filesystem::path>& config_file,
                              const std::string& preset, const nlohmann::json& overrides);

void merge_config(nlohmann::json& base, const nlohmann::json& overlay);

PairStrategy strategy_from_config(const nlohmann::json& cfg);
TransformPolicy transform_policy_from_config(const nlohmann::json& cfg, const std::string& which,
                                             int output_size);

struct PretrainConfig {
    PairStrategy strategy = PairStrategy::ordered();
    int epochs = 20;
    int batch_size = 8;  // N specimens per step -> 2N views
    double learning_rate = 1e-3;
    std::string optimizer = "adam";
    double temperature = 0.01;
    bool strict_exclusion = false;
    int input_size = 48;
    uint64_t seed = 0;
    std::string encoder = "toy64";
    bool head_bias = true;
    int checkpoint_every = 0;
    TransformPolicy policy = TransformPolicy::pretrain(48);

    void validate() const;
};

struct FinetuneConfig {
    enum class Mode { Full, Linear };
    double learning_rate = 1e-3;
    int batch_size = 16;
    int input_size = 48;
    double dropout = 0.3;
    double label_fraction = 1.0;
    Mode mode = Mode::Full;
    uint64_t seed = 0;
    int epochs = 40;
    int patience = 10;
    std::string magnification = "all";  // "40"|"100"|"200"|"400"|"all"
    std::string encoder = "toy64";
    int n_classes = 2;
    TransformPolicy policy = TransformPolicy::finetune(48);

    void validate() const;
};

PretrainConfig pretrain_config_from(const nlohmann::json& cfg);
FinetuneConfig finetune_config_from(const nlohmann::json& cfg);

// Manifest serializers: the exact fields a run executed with.
nlohmann::json to_json(const PairStrategy& s);
nlohmann::json to_json(const TransformPolicy& p);
nlohmann::json to_json(const PretrainConfig& c);
nlohmann::json to_json(const FinetuneConfig& c);

}  // namespace mpcs
