#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "mpcs/rng.hpp"
#include "mpcs/tensor.hpp"

namespace mpcs {

enum class Mode { Train, Eval };

struct ParamTensor {
    std::string name;
    Tensor value;
    Tensor grad;
};

class Layer {
public:
    virtual ~Layer() = default;
    virtual Tensor forward(const Tensor& x, Mode mode, Rng* rng) = 0;
    virtual Tensor backward(const Tensor& gy) = 0;
    virtual std::vector<ParamTensor*> params() { return {}; }
    virtual const std::string& name() const = 0;
    virtual bool is_conv() const { return false; }
};

class Conv2d : public Layer {
public:
    Conv2d(std::string name, int in_ch, int out_ch, int ksize, Rng& init);
    Tensor forward(const Tensor& x, Mode mode, Rng* rng) override;
    Tensor backward(const Tensor& gy) override;
    std::vector<ParamTensor*> params() override { return {&w_, &b_}; }
    const std::string& name() const override { return name_; }
    bool is_conv() const override { return true; }

private:
    std::string name_;
    ParamTensor w_, b_;
    Tensor x_;
};

class ReLU : public Layer {
public:
    explicit ReLU(std::string name) : name_(std::move(name)) {}
    Tensor forward(const Tensor& x, Mode mode, Rng* rng) override;
    Tensor backward(const Tensor& gy) override;
    const std::string& name() const override { return name_; }

private:
    std::string name_;
    Tensor x_;
};

class MaxPool2 : public Layer {
public:
    explicit MaxPool2(std::string name) : name_(std::move(name)) {}
    Tensor forward(const Tensor& x, Mode mode, Rng* rng) override;
    Tensor backward(const Tensor& gy) override;
    const std::string& name() const override { return name_; }

private:
    std::string name_;
    std::vector<int64_t> argmax_;
    std::vector<int> in_shape_;
};

class GlobalAvgPool : public Layer {
public:
    explicit GlobalAvgPool(std::string name) : name_(std::move(name)) {}
    Tensor forward(const Tensor& x, Mode mode, Rng* rng) override;
    Tensor backward(const Tensor& gy) override;
    const std::string& name() const override { return name_; }

private:
    std::string name_;
    int h_ = 0, w_ = 0;
};

class Linear : public Layer {
public:
    Linear(std::string name, int in_dim, int out_dim, Rng& init, bool bias = true);
    Tensor forward(const Tensor& x, Mode mode, Rng* rng) override;
    Tensor backward(const Tensor& gy) override;
    std::vector<ParamTensor*> params() override;
    const std::string& name() const override { return name_; }

private:
    std::string name_;
    ParamTensor w_, b_;
    bool bias_;
    Tensor x_;
};

class Dropout : public Layer {
public:
    Dropout(std::string name, double rate) : name_(std::move(name)), rate_(rate) {}
    Tensor forward(const Tensor& x, Mode mode, Rng* rng) override;
    Tensor backward(const Tensor& gy) override;
    const std::string& name() const override { return name_; }

private:
    std::string name_;
    double rate_;
    Tensor mask_;
    bool active_ = false;
};

// Layer stack with per-layer activation/gradient capture (grad-cam reads
// both for a named conv layer).
class Sequential {
public:
    void add(std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); }

    Tensor forward(const Tensor& x, Mode mode, Rng* rng = nullptr, bool keep_activations = false);
    Tensor backward(const Tensor& gy, bool keep_gradients = false);

    std::vector<ParamTensor*> params();
    void zero_grad();

    int layer_index(const std::string& name) const;  // -1 when absent
    const Layer& layer(int i) const { return *layers_[static_cast<size_t>(i)]; }
    size_t size() const { return layers_.size(); }

    const Tensor& activation(int i) const { return activations_.at(static_cast<size_t>(i)); }
    const Tensor& output_gradient(int i) const { return output_grads_.at(static_cast<size_t>(i)); }

private:
    std::vector<std::unique_ptr<Layer>> layers_;
    std::vector<Tensor> activations_;   // output of each layer (kept on demand)
    std::vector<Tensor> output_grads_;  // grad w.r.t. each layer's output
};

enum class WeightsSource { Random, ExternalPretrained, Checkpoint };

// Encoder contract: image batch (B,3,S,S) -> pooled representation (B,d).
struct EncoderAdapter {
    std::string name;
    int feature_dim = 0;
    WeightsSource source = WeightsSource::Random;
    Sequential net;

    Tensor forward(const Tensor& batch, Mode mode, Rng* rng = nullptr, bool keep_activations = false);
    Tensor backward(const Tensor& g);
};

// Known encoders: "toy64" (4 conv blocks + GAP, d=64) and "toy8" (1 conv
// block + GAP, d=8) are built here. "resnet50" / "efficientnet_b2" are
// recognized names whose weights must come from outside; constructing them
// without a checkpoint throws.
std::unique_ptr<EncoderAdapter> make_encoder(const std::string& name, Rng& init);
bool encoder_known(const std::string& name);

// Documented projection-head widths per encoder.
std::vector<int> head_dims_for(const std::string& encoder_name);

// z = W2 * relu(W1 * h); one hidden layer unless the width list says more.
struct ProjectionHead {
    Sequential net;
    int in_dim = 0, out_dim = 0;

    static ProjectionHead build(int in_dim, const std::vector<int>& widths, Rng& init,
                                bool bias = true);
    Tensor forward(const Tensor& h, Mode mode, Rng* rng = nullptr);
    Tensor backward(const Tensor& g);
};

ProjectionHead default_projection_head(const EncoderAdapter& enc, Rng& init, bool bias = true);

struct ClassifierHead {
    Sequential net;
    int in_dim = 0, n_classes = 0;
    double dropout_rate = 0.3;

    static ClassifierHead build(int in_dim, int n_classes, double dropout, Rng& init);
    Tensor forward(const Tensor& h, Mode mode, Rng* rng = nullptr);
    Tensor backward(const Tensor& g);
};

// Versioned checkpoint container: JSON manifest plus named float64 tensors.
struct Checkpoint {
    static constexpr uint32_t kVersion = 1;
    nlohmann::json manifest;
    std::map<std::string, Tensor> tensors;

    void save(const std::filesystem::path& path) const;
    static Checkpoint load(const std::filesystem::path& path);
};

void store_params(Checkpoint& ckpt, const std::string& prefix, Sequential& net);
void load_params(const Checkpoint& ckpt, const std::string& prefix, Sequential& net);

// FNV-1a over the raw tensor bytes; the freeze-contract witness.
uint64_t params_hash(Sequential& net);

}  // namespace mpcs
