#include "mpcs/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "mpcs/kernels.hpp"

namespace mpcs {

// ------------------------------------------------------------------ layers

Conv2d::Conv2d(std::string name, int in_ch, int out_ch, int ksize, Rng& init) : name_(std::move(name)) {
    w_.name = name_ + "/w";
    w_.value = Tensor({out_ch, in_ch, ksize, ksize});
    const double std = std::sqrt(2.0 / (in_ch * ksize * ksize));
    for (double& v : w_.value.v) v = init.normal() * std;
    w_.grad = Tensor(w_.value.shape);
    b_.name = name_ + "/b";
    b_.value = Tensor({out_ch});
    b_.grad = Tensor({out_ch});
}

Tensor Conv2d::forward(const Tensor& x, Mode, Rng*) {
    x_ = x;
    Tensor y;
    kernels::conv2d_forward(x, w_.value, b_.value, y);
    return y;
}

Tensor Conv2d::backward(const Tensor& gy) {
    Tensor gx, gw, gb;
    kernels::conv2d_backward(x_, w_.value, gy, gx, gw, gb);
    for (size_t i = 0; i < gw.v.size(); ++i) w_.grad.v[i] += gw.v[i];
    for (size_t i = 0; i < gb.v.size(); ++i) b_.grad.v[i] += gb.v[i];
    return gx;
}

Tensor ReLU::forward(const Tensor& x, Mode, Rng*) {
    x_ = x;
    Tensor y = x;
    for (double& v : y.v) v = v > 0.0 ? v : 0.0;
    return y;
}

Tensor ReLU::backward(const Tensor& gy) {
    Tensor gx = gy;
    for (size_t i = 0; i < gx.v.size(); ++i)
        if (x_.v[i] <= 0.0) gx.v[i] = 0.0;
    return gx;
}

Tensor MaxPool2::forward(const Tensor& x, Mode, Rng*) {
    in_shape_ = x.shape;
    Tensor y;
    kernels::maxpool2_forward(x, y, argmax_);
    return y;
}

Tensor MaxPool2::backward(const Tensor& gy) {
    Tensor gx(in_shape_);
    kernels::maxpool2_backward(gy, argmax_, gx);
    return gx;
}

Tensor GlobalAvgPool::forward(const Tensor& x, Mode, Rng*) {
    h_ = x.dim(2);
    w_ = x.dim(3);
    Tensor y;
    kernels::global_avg_pool_forward(x, y);
    return y;
}

Tensor GlobalAvgPool::backward(const Tensor& gy) {
    Tensor gx;
    kernels::global_avg_pool_backward(gy, h_, w_, gx);
    return gx;
}

Linear::Linear(std::string name, int in_dim, int out_dim, Rng& init, bool bias)
    : name_(std::move(name)), bias_(bias) {
    w_.name = name_ + "/w";
    w_.value = Tensor({out_dim, in_dim});
    const double std = std::sqrt(2.0 / in_dim);
    for (double& v : w_.value.v) v = init.normal() * std;
    w_.grad = Tensor(w_.value.shape);
    b_.name = name_ + "/b";
    b_.value = Tensor({out_dim});
    b_.grad = Tensor({out_dim});
}

Tensor Linear::forward(const Tensor& x, Mode, Rng*) {
    x_ = x;
    Tensor y;
    kernels::linear_forward(x, w_.value, b_.value, y);
    return y;
}

Tensor Linear::backward(const Tensor& gy) {
    Tensor gx, gw, gb;
    kernels::linear_backward(x_, w_.value, gy, gx, gw, gb);
    for (size_t i = 0; i < gw.v.size(); ++i) w_.grad.v[i] += gw.v[i];
    if (bias_)
        for (size_t i = 0; i < gb.v.size(); ++i) b_.grad.v[i] += gb.v[i];
    return gx;
}

std::vector<ParamTensor*> Linear::params() {
    if (bias_) return {&w_, &b_};
    return {&w_};
}

Tensor Dropout::forward(const Tensor& x, Mode mode, Rng* rng) {
    active_ = mode == Mode::Train && rate_ > 0.0;
    if (!active_) return x;
    if (rng == nullptr) throw ConfigError("dropout in train mode needs an rng");
    mask_ = Tensor(x.shape);
    const double keep = 1.0 - rate_;
    Tensor y = x;
    for (size_t i = 0; i < x.v.size(); ++i) {
        mask_.v[i] = rng->bernoulli(keep) ? 1.0 / keep : 0.0;
        y.v[i] = x.v[i] * mask_.v[i];
    }
    return y;
}

Tensor Dropout::backward(const Tensor& gy) {
    if (!active_) return gy;
    Tensor gx = gy;
    for (size_t i = 0; i < gx.v.size(); ++i) gx.v[i] *= mask_.v[i];
    return gx;
}

// -------------------------------------------------------------- sequential

Tensor Sequential::forward(const Tensor& x, Mode mode, Rng* rng, bool keep_activations) {
    activations_.clear();
    Tensor cur = x;
    for (auto& layer : layers_) {
        cur = layer->forward(cur, mode, rng);
        if (keep_activations) activations_.push_back(cur);
    }
    return cur;
}

Tensor Sequential::backward(const Tensor& gy, bool keep_gradients) {
    output_grads_.clear();
    if (keep_gradients) output_grads_.resize(layers_.size());
    Tensor cur = gy;
    for (size_t i = layers_.size(); i-- > 0;) {
        if (keep_gradients) output_grads_[i] = cur;
        cur = layers_[i]->backward(cur);
    }
    return cur;
}

std::vector<ParamTensor*> Sequential::params() {
    std::vector<ParamTensor*> out;
    for (auto& layer : layers_)
        for (ParamTensor* p : layer->params()) out.push_back(p);
    return out;
}

void Sequential::zero_grad() {
    for (ParamTensor* p : params()) p->grad.fill(0.0);
}

int Sequential::layer_index(const std::string& name) const {
    for (size_t i = 0; i < layers_.size(); ++i)
        if (layers_[i]->name() == name) return static_cast<int>(i);
    return -1;
}

// ---------------------------------------------------------------- encoders

Tensor EncoderAdapter::forward(const Tensor& batch, Mode mode, Rng* rng, bool keep_activations) {
    if (batch.ndim() != 4 || batch.dim(1) != 3)
        throw ShapeMismatchError("encoder expects (B,3,S,S), got ndim=" + std::to_string(batch.ndim()));
    Tensor h = net.forward(batch, mode, rng, keep_activations);
    for (double v : h.v)
        if (!std::isfinite(v)) throw Error("encoder produced non-finite representation");
    return h;
}

Tensor EncoderAdapter::backward(const Tensor& g) { return net.backward(g); }

bool encoder_known(const std::string& name) {
    return name == "toy64" || name == "toy8" || name == "resnet50" || name == "efficientnet_b2";
}

std::unique_ptr<EncoderAdapter> make_encoder(const std::string& name, Rng& init) {
    auto enc = std::make_unique<EncoderAdapter>();
    enc->name = name;
    enc->source = WeightsSource::Random;
    if (name == "toy64") {
        enc->feature_dim = 64;
        enc->net.add(std::make_unique<Conv2d>("conv1", 3, 8, 3, init));
        enc->net.add(std::make_unique<ReLU>("relu1"));
        enc->net.add(std::make_unique<MaxPool2>("pool1"));
        enc->net.add(std::make_unique<Conv2d>("conv2", 8, 16, 3, init));
        enc->net.add(std::make_unique<ReLU>("relu2"));
        enc->net.add(std::make_unique<MaxPool2>("pool2"));
        enc->net.add(std::make_unique<Conv2d>("conv3", 16, 32, 3, init));
        enc->net.add(std::make_unique<ReLU>("relu3"));
        enc->net.add(std::make_unique<MaxPool2>("pool3"));
        enc->net.add(std::make_unique<Conv2d>("conv4", 32, 64, 3, init));
        enc->net.add(std::make_unique<ReLU>("relu4"));
        enc->net.add(std::make_unique<MaxPool2>("pool4"));
        enc->net.add(std::make_unique<GlobalAvgPool>("gap"));
    } else if (name == "toy8") {
        enc->feature_dim = 8;
        enc->net.add(std::make_unique<Conv2d>("conv1", 3, 8, 3, init));
        enc->net.add(std::make_unique<ReLU>("relu1"));
        enc->net.add(std::make_unique<GlobalAvgPool>("gap"));
    } else if (encoder_known(name)) {
        throw UnknownEncoderError("encoder '" + name +
                                  "' is a plug-in; load its weights from a checkpoint or external source");
    } else {
        throw UnknownEncoderError("UnknownEncoder: " + name);
    }
    return enc;
}

std::vector<int> head_dims_for(const std::string& encoder_name) {
    if (encoder_name == "resnet50") return {1024, 128};
    if (encoder_name == "efficientnet_b2") return {2048, 1204, 128};
    if (encoder_name == "toy64") return {64, 32, 64};
    if (encoder_name == "toy8") return {8, 4, 8};
    throw UnknownEncoderError("UnknownEncoder: " + encoder_name);
}

// ------------------------------------------------------------------- heads

ProjectionHead ProjectionHead::build(int in_dim, const std::vector<int>& widths, Rng& init, bool bias) {
    if (widths.size() < 2) throw ConfigError("projection head needs at least [hidden, out] widths");
    ProjectionHead head;
    head.in_dim = in_dim;
    head.out_dim = widths.back();
    int cur = in_dim;
    for (size_t i = 0; i + 1 < widths.size(); ++i) {
        head.net.add(std::make_unique<Linear>("proj_fc" + std::to_string(i + 1), cur, widths[i], init, bias));
        head.net.add(std::make_unique<ReLU>("proj_relu" + std::to_string(i + 1)));
        cur = widths[i];
    }
    head.net.add(std::make_unique<Linear>("proj_out", cur, widths.back(), init, bias));
    return head;
}

Tensor ProjectionHead::forward(const Tensor& h, Mode mode, Rng* rng) {
    return net.forward(h, mode, rng);
}
Tensor ProjectionHead::backward(const Tensor& g) { return net.backward(g); }

ProjectionHead default_projection_head(const EncoderAdapter& enc, Rng& init, bool bias) {
    auto dims = head_dims_for(enc.name);
    // toy lists carry the input width in front; the documented large-encoder
    // lists already start at the first hidden layer
    std::vector<int> widths(dims.begin(), dims.end());
    if (!widths.empty() && widths.front() == enc.feature_dim && widths.size() > 2)
        widths.erase(widths.begin());
    return ProjectionHead::build(enc.feature_dim, widths, init, bias);
}

ClassifierHead ClassifierHead::build(int in_dim, int n_classes, double dropout, Rng& init) {
    ClassifierHead head;
    head.in_dim = in_dim;
    head.n_classes = n_classes;
    head.dropout_rate = dropout;
    head.net.add(std::make_unique<Dropout>("cls_dropout", dropout));
    head.net.add(std::make_unique<Linear>("cls_fc", in_dim, n_classes, init));
    return head;
}

Tensor ClassifierHead::forward(const Tensor& h, Mode mode, Rng* rng) {
    return net.forward(h, mode, rng);
}
Tensor ClassifierHead::backward(const Tensor& g) { return net.backward(g); }

// ------------------------------------------------------------- checkpoints

namespace {
void write_u32(std::ostream& out, uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ostream& out, uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }
uint32_t read_u32(std::istream& in) {
    uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    return v;
}
uint64_t read_u64(std::istream& in) {
    uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 8);
    return v;
}
constexpr char kMagic[8] = {'M', 'P', 'C', 'S', 'C', 'K', 'P', 'T'};
}  // namespace

void Checkpoint::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint: " + path.string());
    out.write(kMagic, 8);
    write_u32(out, kVersion);
    const std::string m = manifest.dump();
    write_u64(out, m.size());
    out.write(m.data(), static_cast<std::streamsize>(m.size()));
    write_u32(out, static_cast<uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        write_u32(out, static_cast<uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(out, static_cast<uint32_t>(t.shape.size()));
        for (int d : t.shape) write_u32(out, static_cast<uint32_t>(d));
        out.write(reinterpret_cast<const char*>(t.v.data()),
                  static_cast<std::streamsize>(t.v.size() * sizeof(double)));
    }
    if (!out) throw DataError("short write on checkpoint: " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read checkpoint: " + path.string());
    char magic[8];
    in.read(magic, 8);
    if (std::memcmp(magic, kMagic, 8) != 0)
        throw DataError("not a checkpoint file: " + path.string());
    const uint32_t version = read_u32(in);
    if (version != kVersion)
        throw DataError("unsupported checkpoint version " + std::to_string(version));
    Checkpoint ckpt;
    const uint64_t mlen = read_u64(in);
    std::string m(mlen, '\0');
    in.read(m.data(), static_cast<std::streamsize>(mlen));
    ckpt.manifest = nlohmann::json::parse(m);
    const uint32_t n = read_u32(in);
    for (uint32_t i = 0; i < n; ++i) {
        const uint32_t name_len = read_u32(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const uint32_t ndim = read_u32(in);
        std::vector<int> shape(ndim);
        for (uint32_t d = 0; d < ndim; ++d) shape[d] = static_cast<int>(read_u32(in));
        Tensor t(shape);
        in.read(reinterpret_cast<char*>(t.v.data()),
                static_cast<std::streamsize>(t.v.size() * sizeof(double)));
        ckpt.tensors[name] = std::move(t);
    }
    if (!in) throw DataError("truncated checkpoint: " + path.string());
    return ckpt;
}

void store_params(Checkpoint& ckpt, const std::string& prefix, Sequential& net) {
    for (ParamTensor* p : net.params()) ckpt.tensors[prefix + "/" + p->name] = p->value;
}

void load_params(const Checkpoint& ckpt, const std::string& prefix, Sequential& net) {
    for (ParamTensor* p : net.params()) {
        auto it = ckpt.tensors.find(prefix + "/" + p->name);
        if (it == ckpt.tensors.end())
            throw DataError("checkpoint missing tensor " + prefix + "/" + p->name);
        if (it->second.shape != p->value.shape)
            throw ShapeMismatchError("checkpoint tensor shape mismatch for " + p->name);
        p->value = it->second;
    }
}

uint64_t params_hash(Sequential& net) {
    uint64_t h = 1469598103934665603ULL;
    for (ParamTensor* p : net.params())
        for (double v : p->value.v) {
            uint64_t bits;
            std::memcpy(&bits, &v, 8);
            for (int i = 0; i < 8; ++i) {
                h ^= (bits >> (8 * i)) & 0xFF;
                h *= 1099511628211ULL;
            }
        }
    return h;
}

}  // namespace mpcs
