#include "mpcs/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace mpcs {

int argmax_label(const std::vector<double>& scores) {
    if (scores.empty()) throw ConfigError("empty score vector");
    int best = 0;
    for (int i = 1; i < static_cast<int>(scores.size()); ++i)
        if (scores[static_cast<size_t>(i)] > scores[static_cast<size_t>(best)]) best = i;
    return best;
}

double image_level_accuracy(const std::vector<PredictionRecord>& preds) {
    if (preds.empty()) throw DataError("EmptyPredictions: no records");
    int correct = 0;
    for (const auto& p : preds) correct += p.predicted_label == p.true_label;
    return static_cast<double>(correct) / static_cast<double>(preds.size());
}

double patient_level_accuracy(const std::vector<PredictionRecord>& preds) {
    if (preds.empty()) throw DataError("EmptyPredictions: no records");
    std::map<std::string, std::pair<int, int>> per_patient;  // correct, total
    for (const auto& p : preds) {
        if (p.patient_id.empty()) throw DataError("prediction record without patient_id");
        auto& [correct, total] = per_patient[p.patient_id];
        correct += p.predicted_label == p.true_label;
        total += 1;
    }
    double sum = 0.0;
    for (const auto& [id, ct] : per_patient)
        sum += static_cast<double>(ct.first) / static_cast<double>(ct.second);
    return sum / static_cast<double>(per_patient.size());
}

std::pair<int, PredictionRecord> majority_vote(const std::vector<PredictionRecord>& patch_preds) {
    if (patch_preds.empty()) throw DataError("NoPatches: majority vote over empty set");
    const size_t n_classes = patch_preds.front().class_scores.size();
    std::vector<int> votes(n_classes, 0);
    std::vector<double> score_sum(n_classes, 0.0);
    for (const auto& p : patch_preds) {
        if (p.class_scores.size() != n_classes)
            throw ShapeMismatchError("inconsistent class count across patch records");
        votes[static_cast<size_t>(p.predicted_label)]++;
        for (size_t c = 0; c < n_classes; ++c) score_sum[c] += p.class_scores[c];
    }
    const int max_votes = *std::max_element(votes.begin(), votes.end());
    int winner = -1;
    double winner_mean = -1.0;
    for (size_t c = 0; c < n_classes; ++c) {
        if (votes[c] != max_votes) continue;
        const double mean = score_sum[c] / static_cast<double>(patch_preds.size());
        if (mean > winner_mean) {  // strict: equal means fall through to lowest id
            winner = static_cast<int>(c);
            winner_mean = mean;
        }
    }

    PredictionRecord image_rec = patch_preds.front();
    image_rec.patch_coord.reset();
    image_rec.predicted_label = winner;
    image_rec.class_scores.resize(n_classes);
    for (size_t c = 0; c < n_classes; ++c)
        image_rec.class_scores[c] = score_sum[c] / static_cast<double>(patch_preds.size());
    return {winner, image_rec};
}

EvalReport make_report(const std::vector<PredictionRecord>& preds, int fold) {
    EvalReport r;
    r.fold = fold;
    r.ila = image_level_accuracy(preds);
    r.pla = patient_level_accuracy(preds);
    r.n_images = static_cast<int>(preds.size());
    std::set<std::string> patients;
    std::map<int, std::vector<PredictionRecord>> by_mag;
    for (const auto& p : preds) {
        patients.insert(p.patient_id);
        by_mag[to_int(p.magnification)].push_back(p);
    }
    r.n_patients = static_cast<int>(patients.size());
    for (const auto& [mf, records] : by_mag)
        r.per_magnification[mf] = {image_level_accuracy(records), patient_level_accuracy(records)};
    return r;
}

nlohmann::json EvalReport::to_json() const {
    nlohmann::json j;
    j["ila"] = ila;
    j["pla"] = pla;
    if (patch_accuracy) j["patch_accuracy"] = *patch_accuracy;
    if (image_accuracy) j["image_accuracy"] = *image_accuracy;
    j["fold"] = fold;
    j["n_images"] = n_images;
    j["n_patients"] = n_patients;
    j["per_magnification"] = nlohmann::json::object();
    for (const auto& [mf, m] : per_magnification)
        j["per_magnification"][std::to_string(mf)] = {{"ila", m.ila}, {"pla", m.pla}};
    return j;
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
    EvalReport r;
    r.ila = j.at("ila").get<double>();
    r.pla = j.at("pla").get<double>();
    if (j.contains("patch_accuracy")) r.patch_accuracy = j["patch_accuracy"].get<double>();
    if (j.contains("image_accuracy")) r.image_accuracy = j["image_accuracy"].get<double>();
    r.fold = j.value("fold", -1);
    r.n_images = j.value("n_images", 0);
    r.n_patients = j.value("n_patients", 0);
    if (j.contains("per_magnification"))
        for (const auto& [mf, m] : j["per_magnification"].items())
            r.per_magnification[std::stoi(mf)] = {m.at("ila").get<double>(), m.at("pla").get<double>()};
    return r;
}

void EvalReport::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write report: " + path.string());
    out << to_json().dump(2) << "\n";
}

EvalReport EvalReport::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read report: " + path.string());
    return from_json(nlohmann::json::parse(in));
}

std::map<int, MagnificationMetrics> cross_magnification(
    const std::map<std::pair<int, int>, EvalReport>& matrix, CrossMagMode mode) {
    for (Magnification train : kMagnifications)
        for (Magnification eval : kMagnifications)
            if (!matrix.count({to_int(train), to_int(eval)}))
                throw DataError("IncompleteMatrix: missing train=" + to_string(train) +
                                " eval=" + to_string(eval));

    std::map<int, MagnificationMetrics> out;
    for (Magnification pivot : kMagnifications) {
        const int m = to_int(pivot);
        double ila = 0.0, pla = 0.0;
        int count = 0;
        for (Magnification other : kMagnifications) {
            const int o = to_int(other);
            if (o == m) continue;  // diagonal excluded in both modes
            const auto& rep =
                mode == CrossMagMode::Type1 ? matrix.at({m, o}) : matrix.at({o, m});
            ila += rep.ila;
            pla += rep.pla;
            ++count;
        }
        out[m] = {ila / count, pla / count};
    }
    return out;
}

std::vector<std::pair<double, EvalReport>> label_efficiency_sweep(
    std::vector<double> fractions, const std::function<EvalReport(double)>& runner) {
    std::sort(fractions.begin(), fractions.end());
    std::vector<std::pair<double, EvalReport>> rows;
    rows.reserve(fractions.size());
    for (double f : fractions) rows.emplace_back(f, runner(f));
    return rows;
}

// ---------------------------------------------------------------- CSV io

void write_predictions_csv(const std::filesystem::path& path,
                           const std::vector<PredictionRecord>& preds) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write predictions: " + path.string());
    const size_t n_classes = preds.empty() ? 0 : preds.front().class_scores.size();
    out << "specimen_id,patient_id,magnification,row,col,true_label,predicted_label";
    for (size_t c = 0; c < n_classes; ++c) out << ",score_" << c;
    out << "\n";
    out.precision(17);
    for (const auto& p : preds) {
        out << p.specimen_id << "," << p.patient_id << "," << to_int(p.magnification) << ",";
        if (p.patch_coord)
            out << p.patch_coord->first << "," << p.patch_coord->second;
        else
            out << ",";
        out << "," << p.true_label << "," << p.predicted_label;
        for (double s : p.class_scores) out << "," << s;
        out << "\n";
    }
}

std::vector<PredictionRecord> read_predictions_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read predictions: " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty predictions file: " + path.string());
    std::vector<PredictionRecord> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (fields.size() < 7) throw DataError("malformed predictions row: " + line);
        PredictionRecord p;
        p.specimen_id = fields[0];
        p.patient_id = fields[1];
        p.magnification = magnification_from_int(std::stoi(fields[2]));
        if (!fields[3].empty() && !fields[4].empty())
            p.patch_coord = {std::stoi(fields[3]), std::stoi(fields[4])};
        p.true_label = std::stoi(fields[5]);
        p.predicted_label = std::stoi(fields[6]);
        for (size_t i = 7; i < fields.size(); ++i) p.class_scores.push_back(std::stod(fields[i]));
        out.push_back(std::move(p));
    }
    return out;
}

void write_sweep_csv(const std::filesystem::path& path,
                     const std::vector<std::pair<double, EvalReport>>& rows) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write sweep table: " + path.string());
    out << "fraction,ila,pla,n_images,n_patients\n";
    for (const auto& [f, r] : rows)
        out << fraction_key(f) << "," << r.ila << "," << r.pla << "," << r.n_images << ","
            << r.n_patients << "\n";
}

}  // namespace mpcs
