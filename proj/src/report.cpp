#include "mpcs/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "mpcs/kernels.hpp"

namespace mpcs {

FeatureDump export_features(EncoderAdapter& enc, const std::vector<MagnifiedSample>& samples,
                            const std::set<std::string>& specimen_ids, int input_size,
                            const std::string& encoder_id) {
    FeatureDump dump;
    dump.encoder_id = encoder_id;
    dump.dim = enc.feature_dim;
    for (const auto& s : samples) {
        if (!specimen_ids.empty() && !specimen_ids.count(s.specimen_id)) continue;
        for (Magnification m : kMagnifications) {
            const ImageF view =
                kernels::resize_bilinear(to_float(s.images.at(m)), input_size, input_size);
            std::vector<const ImageF*> ptrs = {&view};
            const Tensor h = enc.forward(images_to_batch(ptrs), Mode::Eval);
            FeatureRow row;
            row.specimen_id = s.specimen_id;
            row.magnification = m;
            row.label = s.label();
            row.features.assign(h.v.begin(), h.v.end());
            for (double v : row.features)
                if (!std::isfinite(v)) throw Error("non-finite feature for " + s.specimen_id);
            dump.rows.push_back(std::move(row));
        }
    }
    return dump;
}

void write_features_csv(const std::filesystem::path& path, const FeatureDump& dump) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write features: " + path.string());
    out << "specimen_id,magnification,label";
    for (int i = 0; i < dump.dim; ++i) out << ",f" << i;
    out << "\n";
    out.precision(17);
    for (const auto& r : dump.rows) {
        out << r.specimen_id << "," << to_int(r.magnification) << "," << r.label;
        for (double f : r.features) out << "," << f;
        out << "\n";
    }
}

std::vector<std::array<double, 2>> pca_project(const FeatureDump& dump) {
    const int n = static_cast<int>(dump.rows.size());
    const int d = dump.dim;
    if (n == 0) return {};
    std::vector<double> mean(static_cast<size_t>(d), 0.0);
    for (const auto& r : dump.rows)
        for (int c = 0; c < d; ++c) mean[static_cast<size_t>(c)] += r.features[static_cast<size_t>(c)];
    for (double& m : mean) m /= n;

    // covariance, then top-2 eigenvectors by power iteration with deflation
    std::vector<double> cov(static_cast<size_t>(d) * d, 0.0);
    for (const auto& r : dump.rows)
        for (int a = 0; a < d; ++a)
            for (int b = 0; b < d; ++b)
                cov[static_cast<size_t>(a) * d + b] +=
                    (r.features[static_cast<size_t>(a)] - mean[static_cast<size_t>(a)]) *
                    (r.features[static_cast<size_t>(b)] - mean[static_cast<size_t>(b)]) / n;

    auto power_iter = [&](const std::vector<double>& matrix) {
        std::vector<double> v(static_cast<size_t>(d), 1.0 / std::sqrt(static_cast<double>(d)));
        for (int it = 0; it < 300; ++it) {
            std::vector<double> next(static_cast<size_t>(d), 0.0);
            for (int a = 0; a < d; ++a)
                for (int b = 0; b < d; ++b)
                    next[static_cast<size_t>(a)] += matrix[static_cast<size_t>(a) * d + b] * v[static_cast<size_t>(b)];
            double norm = 0.0;
            for (double x : next) norm += x * x;
            norm = std::sqrt(norm);
            if (norm < 1e-300) return v;
            for (double& x : next) x /= norm;
            v = std::move(next);
        }
        return v;
    };

    const auto v1 = power_iter(cov);
    double lambda1 = 0.0;
    {
        std::vector<double> cv(static_cast<size_t>(d), 0.0);
        for (int a = 0; a < d; ++a)
            for (int b = 0; b < d; ++b)
                cv[static_cast<size_t>(a)] += cov[static_cast<size_t>(a) * d + b] * v1[static_cast<size_t>(b)];
        for (int a = 0; a < d; ++a) lambda1 += cv[static_cast<size_t>(a)] * v1[static_cast<size_t>(a)];
    }
    std::vector<double> deflated = cov;
    for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b)
            deflated[static_cast<size_t>(a) * d + b] -=
                lambda1 * v1[static_cast<size_t>(a)] * v1[static_cast<size_t>(b)];
    const auto v2 = power_iter(deflated);

    std::vector<std::array<double, 2>> out(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        double x = 0.0, y = 0.0;
        for (int c = 0; c < d; ++c) {
            const double centered = dump.rows[static_cast<size_t>(i)].features[static_cast<size_t>(c)] -
                                    mean[static_cast<size_t>(c)];
            x += centered * v1[static_cast<size_t>(c)];
            y += centered * v2[static_cast<size_t>(c)];
        }
        out[static_cast<size_t>(i)] = {x, y};
    }
    return out;
}

void write_projection_csv(const std::filesystem::path& path, const FeatureDump& dump,
                          const std::vector<std::array<double, 2>>& projection) {
    if (dump.rows.size() != projection.size())
        throw ShapeMismatchError("projection rows do not match feature rows");
    std::ofstream out(path);
    if (!out) throw DataError("cannot write projection: " + path.string());
    out << "specimen_id,magnification,label,x,y\n";
    out.precision(17);
    for (size_t i = 0; i < dump.rows.size(); ++i)
        out << dump.rows[i].specimen_id << "," << to_int(dump.rows[i].magnification) << ","
            << dump.rows[i].label << "," << projection[i][0] << "," << projection[i][1] << "\n";
}

// ---------------------------------------------------------------- grad-cam

namespace {

void heat_color(double v, uint8_t rgb[3]) {
    const auto ch = [](double x) { return static_cast<uint8_t>(std::lround(255.0 * std::clamp(x, 0.0, 1.0))); };
    rgb[0] = ch(1.5 - std::abs(4.0 * v - 3.0));
    rgb[1] = ch(1.5 - std::abs(4.0 * v - 2.0));
    rgb[2] = ch(1.5 - std::abs(4.0 * v - 1.0));
}

}  // namespace

ActivationMap grad_cam(EncoderAdapter& enc, ClassifierHead& cls, const ImageF& image,
                       int target_class, const std::string& layer_name,
                       const std::string& image_id) {
    const int idx = enc.net.layer_index(layer_name);
    if (idx < 0) throw LayerNotFoundError("LayerNotFound: " + layer_name);
    if (!enc.net.layer(idx).is_conv())
        throw LayerNotFoundError("NonSpatialLayer: " + layer_name + " is not convolutional");

    std::vector<const ImageF*> ptrs = {&image};
    const Tensor x = images_to_batch(ptrs);
    enc.net.zero_grad();
    cls.net.zero_grad();
    const Tensor h = enc.net.forward(x, Mode::Eval, nullptr, /*keep_activations=*/true);
    const Tensor logits = cls.forward(h, Mode::Eval);
    if (target_class < 0 || target_class >= logits.dim(1))
        throw ConfigError("target class out of range");

    Tensor dlogits({1, logits.dim(1)});
    dlogits.at2(0, target_class) = 1.0;
    const Tensor gh = cls.backward(dlogits);
    enc.net.backward(gh, /*keep_gradients=*/true);

    const Tensor& act = enc.net.activation(idx);
    const Tensor& grad = enc.net.output_gradient(idx);
    const int channels = act.dim(1), mh = act.dim(2), mw = act.dim(3);

    ActivationMap result;
    result.source_image_id = image_id;
    result.target_class = target_class;
    result.map = Tensor({mh, mw});
    for (int k = 0; k < channels; ++k) {
        double wk = 0.0;
        for (int yy = 0; yy < mh; ++yy)
            for (int xx = 0; xx < mw; ++xx) wk += grad.at4(0, k, yy, xx);
        wk /= static_cast<double>(mh * mw);
        for (int yy = 0; yy < mh; ++yy)
            for (int xx = 0; xx < mw; ++xx)
                result.map.at2(yy, xx) += wk * act.at4(0, k, yy, xx);
    }
    double maxv = 0.0;
    for (double& v : result.map.v) {
        v = std::max(v, 0.0);
        maxv = std::max(maxv, v);
    }
    if (maxv > 0.0)
        for (double& v : result.map.v) v /= maxv;

    // overlay: upsample the map to the input size and blend a heat colormap
    ImageF heat(mh, mw);
    for (int yy = 0; yy < mh; ++yy)
        for (int xx = 0; xx < mw; ++xx)
            for (int c = 0; c < 3; ++c) heat.at(yy, xx, c) = result.map.at2(yy, xx);
    const ImageF up = kernels::resize_bilinear(heat, image.h, image.w);
    result.overlay = ImageU8(image.h, image.w);
    for (int yy = 0; yy < image.h; ++yy)
        for (int xx = 0; xx < image.w; ++xx) {
            uint8_t rgb[3];
            const double v = std::clamp(up.at(yy, xx, 0), 0.0, 1.0);
            heat_color(v, rgb);
            for (int c = 0; c < 3; ++c) {
                const double blended = 0.55 * image.at(yy, xx, c) + 0.45 * (rgb[c] / 255.0) * v +
                                       0.45 * image.at(yy, xx, c) * (1.0 - v);
                result.overlay.at(yy, xx, c) =
                    static_cast<uint8_t>(std::lround(std::clamp(blended, 0.0, 1.0) * 255.0));
            }
        }
    return result;
}

void save_npy(const std::filesystem::path& path, const Tensor& map2d) {
    if (map2d.ndim() != 2) throw ShapeMismatchError("save_npy expects a 2-D map");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write npy: " + path.string());
    std::ostringstream header;
    header << "{'descr': '<f8', 'fortran_order': False, 'shape': (" << map2d.dim(0) << ", "
           << map2d.dim(1) << "), }";
    std::string h = header.str();
    const size_t unpadded = 10 + h.size() + 1;
    const size_t padding = (64 - unpadded % 64) % 64;
    h += std::string(padding, ' ');
    h += '\n';
    out.write("\x93NUMPY\x01\x00", 8);
    const uint16_t hlen = static_cast<uint16_t>(h.size());
    out.write(reinterpret_cast<const char*>(&hlen), 2);
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    out.write(reinterpret_cast<const char*>(map2d.v.data()),
              static_cast<std::streamsize>(map2d.v.size() * sizeof(double)));
}

// ------------------------------------------------------------------ tables

void render_tables(const std::filesystem::path& csv_path, const std::filesystem::path& txt_path,
                   const std::map<std::string, std::vector<EvalReport>>& reports_by_method,
                   const std::string& layout) {
    if (layout != "breakhis" && layout != "bach" && layout != "bisque")
        throw ConfigError("layout must be breakhis|bach|bisque, got " + layout);

    struct Cell {
        double mean, std;
    };
    auto cell_for = [](const std::vector<double>& values) {
        double mean = 0.0;
        for (double v : values) mean += v;
        mean /= static_cast<double>(values.size());
        double var = 0.0;
        for (double v : values) var += (v - mean) * (v - mean);
        var /= static_cast<double>(values.size());
        return Cell{mean, std::sqrt(var)};
    };

    std::ofstream csv(csv_path);
    if (!csv) throw DataError("cannot write table: " + csv_path.string());
    std::ofstream txt(txt_path);
    if (!txt) throw DataError("cannot write table: " + txt_path.string());

    csv << "method";
    for (Magnification m : kMagnifications) csv << "," << to_string(m) << "x_ila";
    csv << ",mean_ila\n";

    txt << "ILA (mean±std over folds), layout=" << layout << "\n";
    std::ostringstream head;
    head << std::left << std::setw(28) << "method";
    for (Magnification m : kMagnifications) head << std::setw(16) << (to_string(m) + "x");
    head << std::setw(16) << "mean";
    txt << head.str() << "\n";

    for (const auto& [method, reports] : reports_by_method) {
        if (reports.empty()) throw DataError("SchemaMismatch: no reports for method " + method);
        csv << method;
        std::ostringstream line;
        line << std::left << std::setw(28) << method;
        std::vector<double> overall;
        for (Magnification m : kMagnifications) {
            std::vector<double> values;
            for (const auto& r : reports) {
                auto it = r.per_magnification.find(to_int(m));
                if (it == r.per_magnification.end())
                    throw DataError("SchemaMismatch: report lacks magnification " + to_string(m) +
                                    " for method " + method);
                values.push_back(it->second.ila);
            }
            const Cell c = cell_for(values);
            overall.insert(overall.end(), values.begin(), values.end());
            std::ostringstream cell;
            cell << std::fixed << std::setprecision(2) << 100.0 * c.mean << "±" << 100.0 * c.std;
            csv << "," << cell.str();
            line << std::setw(16) << cell.str();
        }
        const Cell c = cell_for(overall);
        std::ostringstream cell;
        cell << std::fixed << std::setprecision(2) << 100.0 * c.mean << "±" << 100.0 * c.std;
        csv << "," << cell.str() << "\n";
        line << std::setw(16) << cell.str();
        txt << line.str() << "\n";
    }
}

}  // namespace mpcs
