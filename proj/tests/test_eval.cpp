#include "doctest.h"
#include "mpcs/eval.hpp"
#include "mpcs/rng.hpp"
#include "oracles.hpp"

using namespace mpcs;

namespace {

PredictionRecord rec(const std::string& specimen, const std::string& patient, int truth, int pred,
                     Magnification m = Magnification::x40) {
    PredictionRecord r;
    r.specimen_id = specimen;
    r.patient_id = patient;
    r.magnification = m;
    r.true_label = truth;
    r.predicted_label = pred;
    r.class_scores = pred == 0 ? std::vector<double>{0.9, 0.1} : std::vector<double>{0.1, 0.9};
    return r;
}

std::vector<PredictionRecord> random_records(Rng& rng, int n, int n_patients, int n_classes) {
    std::vector<PredictionRecord> out;
    for (int i = 0; i < n; ++i) {
        PredictionRecord r;
        r.specimen_id = "s" + std::to_string(i);
        r.patient_id = "p" + std::to_string(rng.uniform_index(n_patients));
        r.magnification = kMagnifications[static_cast<size_t>(rng.uniform_index(4))];
        r.true_label = rng.uniform_index(n_classes);
        r.class_scores.resize(static_cast<size_t>(n_classes));
        double sum = 0.0;
        for (double& s : r.class_scores) {
            s = rng.uniform01() + 1e-3;
            sum += s;
        }
        for (double& s : r.class_scores) s /= sum;
        r.predicted_label = argmax_label(r.class_scores);
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace

TEST_CASE("image-level accuracy") {
    std::vector<PredictionRecord> all_right = {rec("a", "p", 0, 0), rec("b", "p", 1, 1)};
    CHECK(image_level_accuracy(all_right) == 1.0);

    std::vector<PredictionRecord> three_of_four = {rec("a", "p", 0, 0), rec("b", "p", 1, 1),
                                                   rec("c", "p", 0, 0), rec("d", "p", 1, 0)};
    CHECK(image_level_accuracy(three_of_four) == 0.75);

    CHECK_THROWS_WITH_AS(image_level_accuracy({}), doctest::Contains("EmptyPredictions"), DataError);

    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const auto records = random_records(rng, 10, 3, 2);
        CHECK(image_level_accuracy(records) == doctest::Approx(oracle::ila_reference(records)));
    }
}

TEST_CASE("patient-level accuracy is the unweighted patient mean") {
    std::vector<PredictionRecord> one_patient = {rec("a", "p", 0, 0), rec("b", "p", 0, 1),
                                                 rec("c", "p", 0, 0), rec("d", "p", 0, 1)};
    CHECK(patient_level_accuracy(one_patient) == 0.5);

    // patient A 3/4, patient B 1/2: PLA (0.75 + 0.5)/2, ILA 4/6
    std::vector<PredictionRecord> two = {rec("a1", "A", 0, 0), rec("a2", "A", 0, 0),
                                         rec("a3", "A", 0, 0), rec("a4", "A", 0, 1),
                                         rec("b1", "B", 1, 1), rec("b2", "B", 1, 0)};
    CHECK(patient_level_accuracy(two) == doctest::Approx(0.625).epsilon(1e-12));
    CHECK(image_level_accuracy(two) == doctest::Approx(4.0 / 6.0).epsilon(1e-12));
    CHECK(patient_level_accuracy(two) != image_level_accuracy(two));

    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const auto records = random_records(rng, 12, 4, 3);
        CHECK(patient_level_accuracy(records) == doctest::Approx(oracle::pla_reference(records)));
    }
}

TEST_CASE("PLA equals ILA when patients are balanced with uniform errors") {
    // every patient has 2 images, exactly 1 correct
    std::vector<PredictionRecord> preds;
    for (int p = 0; p < 4; ++p) {
        preds.push_back(rec("s" + std::to_string(2 * p), "p" + std::to_string(p), 0, 0));
        preds.push_back(rec("s" + std::to_string(2 * p + 1), "p" + std::to_string(p), 0, 1));
    }
    CHECK(patient_level_accuracy(preds) == doctest::Approx(image_level_accuracy(preds)));
}

TEST_CASE("majority vote with documented tie rules") {
    std::vector<PredictionRecord> patches;
    for (int i = 0; i < 12; ++i) {
        PredictionRecord p = rec("img", "pat", 2, i < 8 ? 2 : 1);
        p.class_scores = {0.1, i < 8 ? 0.2 : 0.7, i < 8 ? 0.7 : 0.2};
        p.patch_coord = {i / 4, i % 4};
        patches.push_back(p);
    }
    CHECK(majority_vote(patches).first == 2);

    // 1-1 split, mean scores 0.6 vs 0.55
    std::vector<PredictionRecord> split;
    PredictionRecord a = rec("img", "pat", 0, 0);
    a.class_scores = {0.6, 0.4};
    PredictionRecord b = rec("img", "pat", 0, 1);
    b.class_scores = {0.45, 0.55};
    split = {a, b};
    const auto [winner, image_rec] = majority_vote(split);
    CHECK(winner == 0);  // mean score 0.525 vs 0.475
    CHECK(image_rec.predicted_label == 0);
    CHECK_FALSE(image_rec.patch_coord.has_value());
    CHECK(image_rec.class_scores[0] == doctest::Approx(0.525));

    // exact tie in votes and mean scores: lowest class id wins
    PredictionRecord c = rec("img", "pat", 0, 1);
    c.class_scores = {0.4, 0.6};
    PredictionRecord d = rec("img", "pat", 0, 0);
    d.class_scores = {0.6, 0.4};
    CHECK(majority_vote({c, d}).first == 0);

    CHECK_THROWS_WITH_AS(majority_vote({}), doctest::Contains("NoPatches"), DataError);
}

TEST_CASE("majority vote is patch-order invariant and matches brute force") {
    Rng rng(7);
    for (int trial = 0; trial < 200; ++trial) {
        auto patches = random_records(rng, 9, 1, 3);
        for (auto& p : patches) {
            p.specimen_id = "img";
            p.patient_id = "pat";
        }
        const int expected = oracle::majority_vote_reference(patches);
        CHECK(majority_vote(patches).first == expected);
        rng.shuffle(patches);
        CHECK(majority_vote(patches).first == expected);
    }
}

TEST_CASE("cross-magnification aggregation") {
    std::map<std::pair<int, int>, EvalReport> matrix;
    for (Magnification t : kMagnifications)
        for (Magnification e : kMagnifications) {
            EvalReport r;
            r.ila = 0.8;
            r.pla = 0.8;
            matrix[{to_int(t), to_int(e)}] = r;
        }
    for (auto mode : {CrossMagMode::Type1, CrossMagMode::Type2}) {
        const auto summary = cross_magnification(matrix, mode);
        for (const auto& [mf, m] : summary) CHECK(m.ila == doctest::Approx(0.8));
    }

    // index contract: type1[40] averages (40->100, 40->200, 40->400)
    matrix[{40, 100}].ila = 0.3;
    matrix[{40, 200}].ila = 0.6;
    matrix[{40, 400}].ila = 0.9;
    matrix[{40, 40}].ila = 0.0;  // diagonal must be ignored
    const auto t1 = cross_magnification(matrix, CrossMagMode::Type1);
    CHECK(t1.at(40).ila == doctest::Approx(0.6));

    // type2[40] averages (100->40, 200->40, 400->40)
    matrix[{100, 40}].ila = 0.1;
    matrix[{200, 40}].ila = 0.2;
    matrix[{400, 40}].ila = 0.3;
    const auto t2 = cross_magnification(matrix, CrossMagMode::Type2);
    CHECK(t2.at(40).ila == doctest::Approx(0.2));

    matrix.erase({200, 400});
    CHECK_THROWS_WITH_AS(cross_magnification(matrix, CrossMagMode::Type1),
                         doctest::Contains("IncompleteMatrix"), DataError);
}

TEST_CASE("cross-magnification matches a direct loop oracle on random matrices") {
    Rng rng(11);
    std::map<std::pair<int, int>, EvalReport> matrix;
    for (Magnification t : kMagnifications)
        for (Magnification e : kMagnifications) {
            EvalReport r;
            r.ila = rng.uniform01();
            r.pla = rng.uniform01();
            matrix[{to_int(t), to_int(e)}] = r;
        }
    const auto t1 = cross_magnification(matrix, CrossMagMode::Type1);
    const auto t2 = cross_magnification(matrix, CrossMagMode::Type2);
    for (Magnification pivot : kMagnifications) {
        double sum1 = 0, sum2 = 0;
        int n = 0;
        for (Magnification other : kMagnifications) {
            if (other == pivot) continue;
            sum1 += matrix.at({to_int(pivot), to_int(other)}).ila;
            sum2 += matrix.at({to_int(other), to_int(pivot)}).ila;
            ++n;
        }
        CHECK(t1.at(to_int(pivot)).ila == doctest::Approx(sum1 / n));
        CHECK(t2.at(to_int(pivot)).ila == doctest::Approx(sum2 / n));
    }
}

TEST_CASE("label-efficiency sweep emits ascending rows") {
    int calls = 0;
    const auto rows = label_efficiency_sweep({1.0}, [&](double f) {
        ++calls;
        EvalReport r;
        r.ila = f;
        return r;
    });
    CHECK(calls == 1);
    CHECK(rows.size() == 1);

    const auto multi = label_efficiency_sweep({1.0, 0.05, 0.2}, [&](double f) {
        EvalReport r;
        r.ila = f;
        return r;
    });
    REQUIRE(multi.size() == 3);
    CHECK(multi[0].first == doctest::Approx(0.05));
    CHECK(multi[1].first == doctest::Approx(0.2));
    CHECK(multi[2].first == doctest::Approx(1.0));
}

TEST_CASE("prediction CSV round trip") {
    Rng rng(13);
    auto records = random_records(rng, 8, 3, 2);
    records[0].patch_coord = {2, 5};
    const auto path = std::filesystem::temp_directory_path() / "mpcs_test_preds.csv";
    write_predictions_csv(path, records);
    const auto loaded = read_predictions_csv(path);
    REQUIRE(loaded.size() == records.size());
    for (size_t i = 0; i < records.size(); ++i) {
        CHECK(loaded[i].specimen_id == records[i].specimen_id);
        CHECK(loaded[i].patient_id == records[i].patient_id);
        CHECK(loaded[i].magnification == records[i].magnification);
        CHECK(loaded[i].true_label == records[i].true_label);
        CHECK(loaded[i].predicted_label == records[i].predicted_label);
        CHECK(loaded[i].patch_coord == records[i].patch_coord);
        for (size_t c = 0; c < 2; ++c)
            CHECK(loaded[i].class_scores[c] == doctest::Approx(records[i].class_scores[c]).epsilon(1e-15));
    }
}

TEST_CASE("report build and JSON round trip") {
    Rng rng(17);
    const auto records = random_records(rng, 20, 4, 2);
    const EvalReport r = make_report(records, 2);
    CHECK(r.fold == 2);
    CHECK(r.n_images == 20);
    CHECK(r.ila == doctest::Approx(oracle::ila_reference(records)));
    const auto path = std::filesystem::temp_directory_path() / "mpcs_test_report.json";
    r.save(path);
    const EvalReport loaded = EvalReport::load(path);
    CHECK(loaded.ila == doctest::Approx(r.ila));
    CHECK(loaded.pla == doctest::Approx(r.pla));
    CHECK(loaded.per_magnification.size() == r.per_magnification.size());
}
