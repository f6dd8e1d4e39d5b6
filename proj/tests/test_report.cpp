#include <fstream>

#include "doctest.h"
#include "mpcs/kernels.hpp"
#include "mpcs/report.hpp"
#include "oracles.hpp"

using namespace mpcs;
namespace fs = std::filesystem;

namespace {

std::vector<MagnifiedSample> tiny_dataset(uint64_t seed = 7) {
    SyntheticConfig cfg;
    cfg.n_specimens = 8;
    cfg.n_patients = 4;
    cfg.class_balance = 0.5;
    cfg.base_size = 640;
    cfg.out_size = 48;
    cfg.seed = seed;
    return generate_synthetic(cfg);
}

}  // namespace

TEST_CASE("feature export counts and determinism") {
    const auto data = tiny_dataset();
    Rng init(1);
    auto enc = make_encoder("toy8", init);
    std::set<std::string> ids;
    for (const auto& s : data) ids.insert(s.specimen_id);

    const FeatureDump dump = export_features(*enc, data, ids, 24, "enc0");
    CHECK(dump.rows.size() == 8 * 4);
    CHECK(dump.dim == 8);

    const FeatureDump again = export_features(*enc, data, ids, 24, "enc0");
    for (size_t i = 0; i < dump.rows.size(); ++i)
        CHECK(dump.rows[i].features == again.rows[i].features);

    const auto path = fs::temp_directory_path() / "mpcs_test_features.csv";
    write_features_csv(path, dump);
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    CHECK(header.rfind("specimen_id,magnification,label,f0", 0) == 0);
    int rows = 0;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 32);
}

TEST_CASE("feature rows match the linear-encoder matrix oracle") {
    // 1x1 conv + GAP: features are an affine map of the channel means
    Rng init(2);
    EncoderAdapter enc;
    enc.name = "manual";
    enc.feature_dim = 2;
    auto conv = std::make_unique<Conv2d>("conv1", 3, 2, 1, init);
    const double w[2][3] = {{0.2, -0.4, 1.0}, {0.9, 0.1, -0.3}};
    {
        auto params = conv->params();
        for (int o = 0; o < 2; ++o)
            for (int i = 0; i < 3; ++i) params[0]->value.at4(o, i, 0, 0) = w[o][i];
        params[1]->value[0] = 0.05;
        params[1]->value[1] = -0.02;
    }
    enc.net.add(std::move(conv));
    enc.net.add(std::make_unique<GlobalAvgPool>("gap"));

    const auto data = tiny_dataset(9);
    std::set<std::string> ids = {data[0].specimen_id};
    const FeatureDump dump = export_features(enc, data, ids, 16, "manual");
    REQUIRE(dump.rows.size() == 4);
    for (const auto& row : dump.rows) {
        const ImageF view = kernels::resize_bilinear(
            to_float(data[0].images.at(row.magnification)), 16, 16);
        double mean[3] = {0, 0, 0};
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x)
                for (int c = 0; c < 3; ++c) mean[c] += view.at(y, x, c) * 2.0 - 1.0;
        for (double& m : mean) m /= 256.0;
        const double bias[2] = {0.05, -0.02};
        for (int o = 0; o < 2; ++o) {
            double expected = bias[o];
            for (int c = 0; c < 3; ++c) expected += w[o][c] * mean[c];
            CHECK(row.features[static_cast<size_t>(o)] == doctest::Approx(expected).epsilon(1e-9));
        }
    }
}

TEST_CASE("pca projection separates two obvious clusters") {
    FeatureDump dump;
    dump.dim = 4;
    Rng rng(3);
    for (int i = 0; i < 40; ++i) {
        FeatureRow row;
        row.specimen_id = "s" + std::to_string(i);
        row.magnification = Magnification::x40;
        row.label = i % 2;
        const double base = row.label ? 5.0 : -5.0;
        row.features = {base + rng.normal() * 0.1, rng.normal() * 0.1, rng.normal() * 0.1,
                        rng.normal() * 0.1};
        dump.rows.push_back(row);
    }
    const auto proj = pca_project(dump);
    REQUIRE(proj.size() == 40);
    // first component separates the labels perfectly (up to sign)
    int agree = 0;
    for (size_t i = 0; i < proj.size(); ++i)
        agree += (proj[i][0] > 0) == (dump.rows[i].label == 1);
    CHECK((agree == 0 || agree == 40));
}

TEST_CASE("grad-cam hand-computed two-channel case") {
    // encoder: 1x1 conv (3 -> 2) + GAP; classifier: linear (2 -> 2), no dropout.
    // logit_c = sum_k W[c][k] * mean(A_k) + b_c, so dlogit/dA_k = W[c][k]/4
    // everywhere; channel weight w_k = W[c][k]/4; map = relu(sum_k w_k A_k).
    Rng init(4);
    EncoderAdapter enc;
    enc.name = "manual";
    enc.feature_dim = 2;
    auto conv = std::make_unique<Conv2d>("conv1", 3, 2, 1, init);
    const double cw[2][3] = {{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}};
    {
        auto params = conv->params();
        for (int o = 0; o < 2; ++o)
            for (int i = 0; i < 3; ++i) params[0]->value.at4(o, i, 0, 0) = cw[o][i];
        params[1]->value.fill(0.0);
    }
    enc.net.add(std::move(conv));
    enc.net.add(std::make_unique<GlobalAvgPool>("gap"));

    ClassifierHead cls = ClassifierHead::build(2, 2, 0.0, init);
    const double lw[2][2] = {{2.0, -1.0}, {0.5, 1.5}};
    {
        auto params = cls.net.params();
        for (int o = 0; o < 2; ++o)
            for (int k = 0; k < 2; ++k) params[0]->value.at2(o, k) = lw[o][k];
        params[1]->value.fill(0.0);
    }

    // 2x2 image: channel 0 and 1 carry structure, mapped to [-1, 1] inputs
    ImageF img(2, 2);
    const double red[4] = {0.9, 0.1, 0.6, 0.4};
    const double green[4] = {0.2, 0.8, 0.3, 0.7};
    for (int i = 0; i < 4; ++i) {
        img.px[3 * static_cast<size_t>(i)] = red[i];
        img.px[3 * static_cast<size_t>(i) + 1] = green[i];
        img.px[3 * static_cast<size_t>(i) + 2] = 0.5;
    }

    const int target = 0;
    const ActivationMap cam = grad_cam(enc, cls, img, target, "conv1", "img0");

    // oracle: A_k = input channel k (through the identity-ish conv), in
    // model units x*2-1; w_k = lw[0][k]/4; map = relu(w0*A0 + w1*A1), min-max
    double a0[4], a1[4], raw[4];
    for (int i = 0; i < 4; ++i) {
        a0[i] = red[i] * 2 - 1;
        a1[i] = green[i] * 2 - 1;
        raw[i] = std::max(0.0, lw[0][0] / 4.0 * a0[i] + lw[0][1] / 4.0 * a1[i]);
    }
    double maxv = 0;
    for (double v : raw) maxv = std::max(maxv, v);
    REQUIRE(cam.map.numel() == 4);
    for (int i = 0; i < 4; ++i) {
        const double expected = maxv > 0 ? raw[i] / maxv : 0.0;
        CHECK(cam.map.v[static_cast<size_t>(i)] == doctest::Approx(expected).epsilon(1e-9));
    }
    CHECK(cam.overlay.h == 2);
    CHECK(cam.target_class == target);
}

TEST_CASE("grad-cam of a constant-output class is all zero") {
    // classifier row of zeros: zero gradient everywhere -> all-zero map
    Rng init(5);
    auto enc = make_encoder("toy8", init);
    ClassifierHead cls = ClassifierHead::build(8, 2, 0.0, init);
    for (ParamTensor* p : cls.net.params()) p->value.fill(0.0);
    ImageF img(8, 8);
    for (double& v : img.px) v = 0.3;
    const ActivationMap cam = grad_cam(*enc, cls, img, 1, "conv1");
    for (double v : cam.map.v) CHECK(v == 0.0);
}

TEST_CASE("grad-cam rejects unknown or non-spatial layers") {
    Rng init(6);
    auto enc = make_encoder("toy8", init);
    ClassifierHead cls = ClassifierHead::build(8, 2, 0.0, init);
    ImageF img(8, 8);
    CHECK_THROWS_AS(grad_cam(*enc, cls, img, 0, "conv9"), LayerNotFoundError);
    CHECK_THROWS_AS(grad_cam(*enc, cls, img, 0, "gap"), LayerNotFoundError);
}

TEST_CASE("npy export carries the right header and payload") {
    Tensor map({2, 3}, {0.0, 0.25, 0.5, 0.75, 1.0, 0.125});
    const auto path = fs::temp_directory_path() / "mpcs_test_map.npy";
    save_npy(path, map);
    std::ifstream in(path, std::ios::binary);
    std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    REQUIRE(all.size() > 10);
    CHECK(all.rfind("\x93NUMPY", 0) == 0);
    CHECK(all.find("'descr': '<f8'") != std::string::npos);
    CHECK(all.find("(2, 3)") != std::string::npos);
    double payload[6];
    std::memcpy(payload, all.data() + all.size() - 48, 48);
    for (int i = 0; i < 6; ++i) CHECK(payload[i] == map.v[static_cast<size_t>(i)]);
}

TEST_CASE("tables: one method, five folds, four magnification columns") {
    std::vector<EvalReport> folds;
    for (int f = 0; f < 5; ++f) {
        EvalReport r;
        r.fold = f;
        r.ila = 0.8;
        r.pla = 0.8;
        for (Magnification m : kMagnifications)
            r.per_magnification[to_int(m)] = {0.8, 0.8};
        folds.push_back(r);
    }
    const auto csv_path = fs::temp_directory_path() / "mpcs_test_tables.csv";
    const auto txt_path = fs::temp_directory_path() / "mpcs_test_tables.txt";
    render_tables(csv_path, txt_path, {{"mpcs-ordered", folds}}, "breakhis");

    std::ifstream in(csv_path);
    std::string header, row, extra;
    std::getline(in, header);
    std::getline(in, row);
    CHECK_FALSE(std::getline(in, extra));  // exactly one data row
    CHECK(header == "method,40x_ila,100x_ila,200x_ila,400x_ila,mean_ila");
    CHECK(row.rfind("mpcs-ordered,", 0) == 0);
    CHECK(row.find("80.00±0.00") != std::string::npos);

    // varying metrics: cells must equal recomputed mean/std
    folds[0].per_magnification[40] = {0.6, 0.6};
    render_tables(csv_path, txt_path, {{"m", folds}}, "bach");
    std::ifstream in2(csv_path);
    std::getline(in2, header);
    std::getline(in2, row);
    const double mean = (0.6 + 0.8 * 4) / 5.0;
    double var = 0.0;
    for (double v : {0.6, 0.8, 0.8, 0.8, 0.8}) var += (v - mean) * (v - mean) / 5.0;
    char expected[32];
    std::snprintf(expected, sizeof(expected), "%.2f±%.2f", 100 * mean, 100 * std::sqrt(var));
    CHECK(row.find(expected) != std::string::npos);

    CHECK_THROWS_AS(render_tables(csv_path, txt_path, {{"m", folds}}, "martian"), ConfigError);
    EvalReport missing;
    missing.ila = 0.5;
    CHECK_THROWS_WITH_AS(render_tables(csv_path, txt_path, {{"m", {missing}}}, "breakhis"),
                         doctest::Contains("SchemaMismatch"), DataError);
}
