#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "mpcs/dataset.hpp"
#include "mpcs/kernels.hpp"
#include "oracles.hpp"

using namespace mpcs;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("mpcs_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

uint64_t file_hash(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    uint64_t h = 1469598103934665603ULL;
    char c;
    while (in.get(c)) {
        h ^= static_cast<uint8_t>(c);
        h *= 1099511628211ULL;
    }
    return h;
}

// in-memory samples without images; enough for fold/subset logic
std::vector<MagnifiedSample> flat_samples(int n_patients, int specimens_per_patient,
                                          int patients_per_class) {
    std::vector<MagnifiedSample> out;
    for (int p = 0; p < n_patients; ++p) {
        const int label = p / patients_per_class;
        for (int s = 0; s < specimens_per_patient; ++s)
            out.emplace_back("s" + std::to_string(p) + "_" + std::to_string(s),
                             "p" + std::to_string(p), label);
    }
    return out;
}

SyntheticConfig small_synth(uint64_t seed = 7) {
    SyntheticConfig cfg;
    cfg.n_specimens = 8;
    cfg.n_patients = 4;
    cfg.class_balance = 0.5;
    cfg.base_size = 640;
    cfg.out_size = 64;
    cfg.seed = seed;
    return cfg;
}

}  // namespace

TEST_CASE("synthetic counting contract") {
    const auto samples = generate_synthetic(small_synth());
    REQUIRE(samples.size() == 8);
    int benign = 0, malignant = 0;
    std::map<std::string, int> per_patient;
    for (const auto& s : samples) {
        (s.label() == 0 ? benign : malignant)++;
        per_patient[s.patient_id]++;
        CHECK(s.images.size() == 4);
        for (Magnification m : kMagnifications) {
            CHECK(s.images.at(m).h == 64);
            CHECK(s.images.at(m).w == 64);
        }
    }
    CHECK(benign == 4);
    CHECK(malignant == 4);
    CHECK(per_patient.size() == 4);
    for (const auto& [id, count] : per_patient) CHECK(count == 2);
}

TEST_CASE("synthetic generation is byte-identical under one seed") {
    const fs::path a = scratch_dir("synth_a");
    const fs::path b = scratch_dir("synth_b");
    generate_synthetic(small_synth(7), a);
    generate_synthetic(small_synth(7), b);

    std::vector<fs::path> files_a;
    for (const auto& e : fs::recursive_directory_iterator(a))
        if (e.is_regular_file()) files_a.push_back(fs::relative(e.path(), a));
    std::sort(files_a.begin(), files_a.end());
    REQUIRE(files_a.size() == 8 * 4 * 2 + 1);  // images + masks + index.json
    for (const auto& rel : files_a) CHECK(file_hash(a / rel) == file_hash(b / rel));

    const auto different = generate_synthetic(small_synth(8));
    const auto baseline = generate_synthetic(small_synth(7));
    CHECK(different[0].images.at(Magnification::x40).px !=
          baseline[0].images.at(Magnification::x40).px);
}

TEST_CASE("planted region is visible at every magnification") {
    const auto cfg = small_synth(21);
    for (int i = 0; i < cfg.n_specimens; ++i) {
        const auto masks = synthetic_masks(cfg, i);
        for (Magnification m : kMagnifications) {
            int lit = 0;
            for (uint8_t v : masks.at(m).px) lit += v > 0;
            INFO("specimen " << i << " at " << to_string(m) << "x");
            CHECK(lit > 0);
        }
    }
}

TEST_CASE("ingest round-trips the generated layout") {
    const fs::path root = scratch_dir("roundtrip");
    const auto written = generate_synthetic(small_synth(3), root);
    const IngestResult loaded = ingest_layout(root);
    REQUIRE(loaded.samples.size() == written.size());
    CHECK(loaded.class_names == std::vector<std::string>{"benign", "malignant"});
    CHECK(loaded.warnings.empty());
    for (const auto& w : written) {
        const MagnifiedSample& l = find_specimen(loaded.samples, w.specimen_id);
        CHECK(l.patient_id == w.patient_id);
        CHECK(l.label() == w.label());
        for (Magnification m : kMagnifications) CHECK(l.images.at(m).px == w.images.at(m).px);
    }
}

TEST_CASE("ingest skips specimens missing a magnification, with a warning") {
    const fs::path root = scratch_dir("missing_mf");
    generate_synthetic(small_synth(4), root);
    fs::remove_all(root / "benign" / "p000" / "s0000" / "400X");
    const IngestResult loaded = ingest_layout(root);
    CHECK(loaded.samples.size() == 7);
    REQUIRE(loaded.warnings.size() == 1);
    CHECK(loaded.warnings[0].specimen_id == "s0000");
    CHECK(loaded.warnings[0].message.find("MissingMagnification") != std::string::npos);
}

TEST_CASE("ingest of an empty root is fatal") {
    const fs::path root = scratch_dir("empty_root");
    CHECK_THROWS_AS(ingest_layout(root), EmptyDatasetError);
    CHECK_THROWS_AS(ingest_layout(root / "nope"), DataError);
}

TEST_CASE("BreakHis-shaped root with 82 patients yields 82 patient ids") {
    const fs::path root = scratch_dir("breakhis_shape");
    // hand-built layout with tiny files; ingest only cares about structure
    ImageU8 tiny(4, 4);
    for (int p = 0; p < 82; ++p) {
        const std::string cls = p % 3 ? "malignant" : "benign";
        const std::string patient = "pat" + std::to_string(100 + p);
        const std::string specimen = "spec" + std::to_string(1000 + p);
        for (Magnification m : kMagnifications) {
            const fs::path dir = root / cls / patient / specimen / to_dirname(m);
            fs::create_directories(dir);
            save_png(dir / "img.png", tiny);
        }
    }
    const IngestResult loaded = ingest_layout(root);
    std::set<std::string> patients;
    for (const auto& s : loaded.samples) patients.insert(s.patient_id);
    CHECK(patients.size() == 82);
}

TEST_CASE("patch grid arithmetic and contents") {
    ImageU8 big(1536, 2048);  // h x w
    const PatchGrid g1 = make_patches(big, 512, 512, "a");
    CHECK(g1.patches.size() == 12);

    ImageU8 exact(224, 224);
    CHECK(make_patches(exact, 224, 224).patches.size() == 1);

    ImageU8 bach(768, 896);
    CHECK(make_patches(bach, 224, 224).patches.size() == 12);

    CHECK_THROWS_WITH_AS(make_patches(exact, 512, 512), doctest::Contains("PatchTooLarge"),
                         ConfigError);

    // row-major order and exact pixel copy
    ImageU8 src(4, 6);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 6; ++x) src.at(y, x, 0) = static_cast<uint8_t>(y * 6 + x);
    const PatchGrid g2 = make_patches(src, 2, 2, "s");
    REQUIRE(g2.patches.size() == 6);
    CHECK(g2.patches[0].row == 0);
    CHECK(g2.patches[0].col == 0);
    CHECK(g2.patches[1].col == 1);
    CHECK(g2.patches[3].row == 1);
    CHECK(g2.patches[4].image.at(0, 0, 0) == src.at(2, 2, 0));
}

TEST_CASE("patch count matches the closed form on random shapes") {
    Rng rng(31);
    for (int trial = 0; trial < 100; ++trial) {
        const int h = 8 + rng.uniform_index(120);
        const int w = 8 + rng.uniform_index(120);
        const int size = 1 + rng.uniform_index(std::min(h, w));
        const int stride = 1 + rng.uniform_index(16);
        ImageU8 img(h, w);
        const PatchGrid g = make_patches(img, size, stride);
        CHECK(static_cast<int>(g.patches.size()) ==
              patch_count_1d(h, size, stride) * patch_count_1d(w, size, stride));
    }
}

TEST_CASE("folds: perfectly divisible stratification") {
    const auto samples = flat_samples(10, 1, 5);  // 10 patients, 5 per class, 1 specimen each
    const SplitPlan plan = build_folds(samples, 5, 3);
    std::map<int, std::map<int, int>> fold_class_count;
    std::map<int, std::set<std::string>> fold_patients;
    for (const auto& s : samples) {
        const int f = plan.fold_of.at(s.specimen_id);
        fold_class_count[f][s.label()]++;
        fold_patients[f].insert(s.patient_id);
    }
    REQUIRE(fold_class_count.size() == 5);
    for (int f = 0; f < 5; ++f) {
        CHECK(fold_patients[f].size() == 2);
        CHECK(fold_class_count[f][0] == 1);
        CHECK(fold_class_count[f][1] == 1);
    }
}

TEST_CASE("folds: no patient straddles folds, even with mixed labels") {
    auto samples = flat_samples(10, 3, 5);
    // give one patient specimens of both classes; majority should rule
    samples.push_back({"extra", "p0", 1});
    const SplitPlan plan = build_folds(samples, 5, 1);
    std::map<std::string, std::set<int>> patient_folds;
    for (const auto& s : samples)
        patient_folds[s.patient_id].insert(plan.fold_of.at(s.specimen_id));
    for (const auto& [patient, folds] : patient_folds) CHECK(folds.size() == 1);
}

TEST_CASE("folds: sizes within one specimen of 20% on equal-size patients") {
    const auto samples = flat_samples(20, 4, 10);  // 80 specimens
    const SplitPlan plan = build_folds(samples, 5, 9);
    std::map<int, int> sizes;
    for (const auto& [id, f] : plan.fold_of) sizes[f]++;
    for (int f = 0; f < 5; ++f) CHECK(std::abs(sizes[f] - 16) <= 1);
}

TEST_CASE("folds: deterministic under seed, sensitive to it") {
    const auto samples = flat_samples(15, 2, 5);
    const SplitPlan a = build_folds(samples, 5, 4);
    const SplitPlan b = build_folds(samples, 5, 4);
    CHECK(a.fold_of == b.fold_of);
    CHECK(a.label_fractions == b.label_fractions);
    const SplitPlan c = build_folds(samples, 5, 5);
    CHECK(a.fold_of != c.fold_of);  // 15 patients: overwhelmingly likely to differ
}

TEST_CASE("folds: too few patients per class is fatal") {
    const auto samples = flat_samples(6, 2, 3);  // 3 patients per class < k=5
    CHECK_THROWS_WITH_AS(build_folds(samples, 5, 0), doctest::Contains("TooFewPatients"), DataError);
}

TEST_CASE("label subsets: identity, stratified count, nesting") {
    const auto samples = flat_samples(20, 5, 10);  // 100 specimens, 50/50
    const SplitPlan plan = build_folds(samples, 5, 7);

    std::set<int> train_folds = {0, 1, 2, 3, 4};
    const auto full = subsample_labels(plan, samples, train_folds, 1.0, 11);
    CHECK(full.size() == 100);

    const auto fifth = subsample_labels(plan, samples, train_folds, 0.2, 11);
    CHECK(fifth.size() == 20);
    int class1 = 0;
    for (const auto& id : fifth) class1 += find_specimen(samples, id).label();
    CHECK(class1 == 10);

    const auto tiny = subsample_labels(plan, samples, train_folds, 0.05, 3);
    const auto forty = subsample_labels(plan, samples, train_folds, 0.40, 3);
    for (const auto& id : tiny) CHECK(forty.count(id) == 1);
    CHECK(tiny.size() < forty.size());

    CHECK_THROWS_WITH_AS(subsample_labels(plan, samples, train_folds, 0.0, 1),
                         doctest::Contains("FractionOutOfRange"), ConfigError);
    CHECK_THROWS_WITH_AS(subsample_labels(plan, samples, train_folds, 1.5, 1),
                         doctest::Contains("FractionOutOfRange"), ConfigError);
}

TEST_CASE("label subsets nest across all canonical fractions and seeds") {
    const auto samples = flat_samples(12, 3, 6);
    const SplitPlan plan = build_folds(samples, 5, 2);
    const std::set<int> train_folds = {0, 2, 3};
    for (uint64_t seed : {1ULL, 9ULL, 77ULL}) {
        std::set<std::string> prev;
        for (double f : kLabelFractions) {
            const auto cur = subsample_labels(plan, samples, train_folds, f, seed);
            for (const auto& id : prev) CHECK(cur.count(id) == 1);
            prev = cur;
        }
    }
}

TEST_CASE("split plan JSON round trip") {
    const auto samples = flat_samples(10, 2, 5);
    const SplitPlan plan = build_folds(samples, 5, 42);
    const fs::path p = scratch_dir("plan") / "plan.json";
    plan.save(p);
    const SplitPlan loaded = SplitPlan::load(p);
    CHECK(loaded.k == plan.k);
    CHECK(loaded.seed == plan.seed);
    CHECK(loaded.fold_of == plan.fold_of);
    CHECK(loaded.label_fractions == plan.label_fractions);
    // canonical fraction chain is stored nested
    for (size_t i = 1; i < kLabelFractions.size(); ++i) {
        const auto& smaller = plan.label_fractions.at(fraction_key(kLabelFractions[i - 1]));
        const auto& larger = plan.label_fractions.at(fraction_key(kLabelFractions[i]));
        std::set<std::string> larger_set(larger.begin(), larger.end());
        for (const auto& id : smaller) CHECK(larger_set.count(id) == 1);
    }
}

TEST_CASE("invalid synthetic configs are rejected") {
    SyntheticConfig cfg = small_synth();
    cfg.class_balance = 0.0;
    CHECK_THROWS_WITH_AS(generate_synthetic(cfg), doctest::Contains("InvalidBalance"), ConfigError);
    cfg = small_synth();
    cfg.class_balance = 1.0;
    CHECK_THROWS_AS(generate_synthetic(cfg), ConfigError);
    cfg = small_synth();
    cfg.n_patients = 1;
    CHECK_THROWS_AS(generate_synthetic(cfg), ConfigError);
    cfg = small_synth();
    cfg.base_size = 320;
    CHECK_THROWS_AS(generate_synthetic(cfg), ConfigError);
}

TEST_CASE("parallel and serial synthetic generation agree byte for byte") {
    kernels::set_parallel(false);
    const auto serial = generate_synthetic(small_synth(5));
    kernels::set_parallel(true);
    const auto parallel = generate_synthetic(small_synth(5));
    REQUIRE(serial.size() == parallel.size());
    for (size_t i = 0; i < serial.size(); ++i)
        for (Magnification m : kMagnifications)
            CHECK(serial[i].images.at(m).px == parallel[i].images.at(m).px);
}
