#include "mpcs/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>

#include "json.hpp"
#include "mpcs/kernels.hpp"

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace mpcs {

std::string to_string(Magnification m) { return std::to_string(to_int(m)); }
std::string to_dirname(Magnification m) { return std::to_string(to_int(m)) + "X"; }

Magnification magnification_from_int(int v) {
    for (Magnification m : kMagnifications)
        if (to_int(m) == v) return m;
    throw ConfigError("unsupported magnification factor: " + std::to_string(v));
}

namespace {
int round_half_up(double x) { return static_cast<int>(std::floor(x + 0.5)); }
}  // namespace

// ------------------------------------------------------------------ ingest

namespace {

bool is_image_file(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp";
}

std::vector<std::string> sorted_subdirs(const fs::path& dir) {
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_directory()) names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    return names;
}

}  // namespace

IngestResult ingest_layout(const fs::path& root) {
    if (!fs::exists(root) || !fs::is_directory(root))
        throw DataError("dataset root does not exist: " + root.string());

    IngestResult result;
    std::vector<std::string> class_dirs;
    for (const auto& name : sorted_subdirs(root)) {
        if (name == "masks") continue;  // synthetic verification masks live beside the classes
        class_dirs.push_back(name);
    }
    result.class_names = class_dirs;

    for (size_t class_id = 0; class_id < class_dirs.size(); ++class_id) {
        const fs::path class_dir = root / class_dirs[class_id];
        for (const auto& patient : sorted_subdirs(class_dir)) {
            const fs::path patient_dir = class_dir / patient;
            for (const auto& specimen : sorted_subdirs(patient_dir)) {
                const fs::path specimen_dir = patient_dir / specimen;
                MagnifiedSample sample(specimen, patient, static_cast<int>(class_id));
                bool ok = true;
                for (Magnification m : kMagnifications) {
                    const fs::path mf_dir = specimen_dir / to_dirname(m);
                    fs::path chosen;
                    if (fs::exists(mf_dir)) {
                        std::vector<fs::path> files;
                        for (const auto& e : fs::directory_iterator(mf_dir))
                            if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
                        std::sort(files.begin(), files.end());
                        if (!files.empty()) chosen = files.front();
                    }
                    if (chosen.empty()) {
                        result.warnings.push_back(
                            {specimen, "MissingMagnification: " + to_dirname(m) + " absent, specimen skipped"});
                        ok = false;
                        break;
                    }
                    try {
                        sample.images[m] = load_png(chosen);
                        sample.source_path[m] = chosen;
                    } catch (const DataError& err) {
                        result.warnings.push_back(
                            {specimen, std::string("UnreadableImage: ") + err.what() + ", specimen skipped"});
                        ok = false;
                        break;
                    }
                }
                if (ok) result.samples.push_back(std::move(sample));
            }
        }
    }

    if (result.samples.empty())
        throw EmptyDatasetError("EmptyDataset: no complete specimens under " + root.string());
    return result;
}

// --------------------------------------------------------------- synthetic

namespace {

struct Blob {
    double cx, cy, r, alpha, softness;
    bool in_cluster;
};

struct CanvasSpec {
    int class_id = 0;
    double brightness = 1.0;
    double tint[3] = {1.0, 1.0, 1.0};
    double noise_sigma = 0.012;
    double cluster_cx = 0.0, cluster_cy = 0.0, cluster_r = 0.0;
    std::vector<Blob> blobs;
    std::vector<double> lowfreq;  // grid x grid additive field
    int grid = 9;
    uint64_t noise_seed = 0;
};

constexpr double kBg[3] = {0.90, 0.76, 0.87};        // H&E-ish tissue base
constexpr double kStainWeight[3] = {0.55, 1.0, 0.35};  // hematoxylin absorbs green most

// Nucleus-blob parameters per class. Malignant tissue reads as many small
// sharp high-contrast nuclei, benign as few large soft faint ones; the
// counts/amplitudes are balanced so neither total ink nor edge energy alone
// separates the classes once the per-specimen stain nuisance is on top.
Blob draw_blob(Rng& rng, bool malignant, double canvas) {
    Blob b;
    if (malignant) {
        b.r = rng.uniform(0.0045, 0.0070) * canvas;
        b.alpha = rng.uniform(0.26, 0.38);
        b.softness = 0.55;
    } else {
        b.r = rng.uniform(0.016, 0.026) * canvas;
        b.alpha = rng.uniform(0.12, 0.18);
        b.softness = 0.85;
    }
    return b;
}

// All stochastic choices for one specimen, in one fixed draw order.
CanvasSpec draw_canvas_spec(const SyntheticConfig& cfg, int specimen_index, int class_id) {
    Rng rng = Rng::derive(cfg.seed, {0x5EEDu, static_cast<uint64_t>(specimen_index)});
    const double B = cfg.base_size;

    CanvasSpec spec;
    spec.class_id = class_id;
    spec.brightness = rng.uniform(0.78, 1.22);
    for (double& t : spec.tint) t = rng.uniform(0.92, 1.08);
    spec.noise_sigma = rng.uniform(0.008, 0.040);

    spec.lowfreq.resize(static_cast<size_t>(spec.grid) * spec.grid);
    for (double& v : spec.lowfreq) v = rng.uniform(-0.05, 0.05);

    spec.cluster_cx = B / 2 + rng.uniform(-0.12, 0.12) * B;
    spec.cluster_cy = B / 2 + rng.uniform(-0.12, 0.12) * B;
    spec.cluster_r = 0.065 * B;

    const bool malignant = class_id == 1;

    // dense cluster at the planted region
    const int n_cluster = malignant ? 35 + rng.uniform_index(11) : 6 + rng.uniform_index(3);
    for (int i = 0; i < n_cluster; ++i) {
        Blob b = draw_blob(rng, malignant, B);
        b.in_cluster = true;
        if (i == 0) {
            // anchor blob at the cluster center: keeps the planted region
            // inside every magnification crop by construction
            b.cx = spec.cluster_cx;
            b.cy = spec.cluster_cy;
        } else {
            const double rad = spec.cluster_r * std::sqrt(rng.uniform01());
            const double ang = rng.uniform(0.0, 2.0 * M_PI);
            b.cx = spec.cluster_cx + rad * std::cos(ang);
            b.cy = spec.cluster_cy + rad * std::sin(ang);
        }
        spec.blobs.push_back(b);
    }

    // class-typed scatter across the whole canvas, so every crop of every
    // magnification carries the texture
    const int n_scatter = malignant ? 60 + rng.uniform_index(21) : 11 + rng.uniform_index(5);
    for (int i = 0; i < n_scatter; ++i) {
        Blob b = draw_blob(rng, malignant, B);
        b.in_cluster = false;
        b.cx = rng.uniform(0.03, 0.97) * B;
        b.cy = rng.uniform(0.03, 0.97) * B;
        spec.blobs.push_back(b);
    }

    spec.noise_seed = rng.next_u64();
    return spec;
}

double lowfreq_at(const CanvasSpec& spec, double y, double x, int size) {
    const double gy = y / (size - 1.0) * (spec.grid - 1);
    const double gx = x / (size - 1.0) * (spec.grid - 1);
    const int y0 = std::min(static_cast<int>(gy), spec.grid - 2);
    const int x0 = std::min(static_cast<int>(gx), spec.grid - 2);
    const double fy = gy - y0, fx = gx - x0;
    const auto at = [&](int yy, int xx) { return spec.lowfreq[static_cast<size_t>(yy) * spec.grid + xx]; };
    return at(y0, x0) * (1 - fy) * (1 - fx) + at(y0, x0 + 1) * (1 - fy) * fx +
           at(y0 + 1, x0) * fy * (1 - fx) + at(y0 + 1, x0 + 1) * fy * fx;
}

ImageF render_canvas(const SyntheticConfig& cfg, const CanvasSpec& spec) {
    const int B = cfg.base_size;
    ImageF canvas(B, B);
    Rng noise(spec.noise_seed);
    for (int y = 0; y < B; ++y)
        for (int x = 0; x < B; ++x) {
            const double lf = lowfreq_at(spec, y, x, B);
            const double n = noise.normal() * spec.noise_sigma;
            for (int c = 0; c < 3; ++c)
                canvas.at(y, x, c) = (kBg[c] + lf + n) * spec.brightness * spec.tint[c];
        }
    // multiplicative absorption per blob, bounding-box limited
    for (const Blob& b : spec.blobs) {
        const double reach = b.r * 2.4;
        const int y0 = std::max(0, static_cast<int>(b.cy - reach));
        const int y1 = std::min(B - 1, static_cast<int>(b.cy + reach));
        const int x0 = std::max(0, static_cast<int>(b.cx - reach));
        const int x1 = std::min(B - 1, static_cast<int>(b.cx + reach));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                const double dy = y - b.cy, dx = x - b.cx;
                const double d2 = (dy * dy + dx * dx) / (b.softness * b.softness * b.r * b.r);
                const double f = std::exp(-d2);
                if (f < 1e-3) continue;
                for (int c = 0; c < 3; ++c)
                    canvas.at(y, x, c) *= 1.0 - b.alpha * f * kStainWeight[c];
            }
    }
    for (double& v : canvas.px) v = std::clamp(v, 0.0, 1.0);
    return canvas;
}

// Planted-region mask at canvas resolution: the disk the cluster blobs were
// planted in. A solid region survives the crop/resize geometry at every
// factor, which is what the verification masks certify.
std::vector<uint8_t> render_mask(const SyntheticConfig& cfg, const CanvasSpec& spec) {
    const int B = cfg.base_size;
    std::vector<uint8_t> mask(static_cast<size_t>(B) * B, 0);
    const double r2 = spec.cluster_r * spec.cluster_r;
    const int y0 = std::max(0, static_cast<int>(spec.cluster_cy - spec.cluster_r));
    const int y1 = std::min(B - 1, static_cast<int>(spec.cluster_cy + spec.cluster_r));
    const int x0 = std::max(0, static_cast<int>(spec.cluster_cx - spec.cluster_r));
    const int x1 = std::min(B - 1, static_cast<int>(spec.cluster_cx + spec.cluster_r));
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            const double dy = y - spec.cluster_cy, dx = x - spec.cluster_cx;
            if (dy * dy + dx * dx <= r2) mask[static_cast<size_t>(y) * B + x] = 255;
        }
    return mask;
}

struct ViewBox {
    int x0, y0, side;
};

ViewBox view_box(const SyntheticConfig& cfg, const CanvasSpec& spec, Magnification m) {
    const int B = cfg.base_size;
    const int side = B * 40 / to_int(m);
    const int x0 = std::clamp(static_cast<int>(spec.cluster_cx) - side / 2, 0, B - side);
    const int y0 = std::clamp(static_cast<int>(spec.cluster_cy) - side / 2, 0, B - side);
    return {x0, y0, side};
}

ImageF crop(const ImageF& src, const ViewBox& box) {
    ImageF out(box.side, box.side);
    for (int y = 0; y < box.side; ++y)
        for (int x = 0; x < box.side; ++x)
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = src.at(box.y0 + y, box.x0 + x, c);
    return out;
}

MaskU8 crop_resize_mask(const std::vector<uint8_t>& mask, int canvas_size, const ViewBox& box,
                        int out_size) {
    // reuse the image resampler on a mask promoted to float, then threshold
    ImageF m(box.side, box.side);
    for (int y = 0; y < box.side; ++y)
        for (int x = 0; x < box.side; ++x) {
            const double v = mask[static_cast<size_t>(box.y0 + y) * canvas_size + (box.x0 + x)] / 255.0;
            for (int c = 0; c < 3; ++c) m.at(y, x, c) = v;
        }
    const ImageF r = kernels::resize_bilinear(m, out_size, out_size);
    MaskU8 out(out_size, out_size);
    for (int y = 0; y < out_size; ++y)
        for (int x = 0; x < out_size; ++x) out.at(y, x) = r.at(y, x, 0) > 0.5 ? 255 : 0;
    return out;
}

struct Assignment {
    int class_id;
    std::string patient_id;
    std::string specimen_id;
};

std::vector<Assignment> plan_assignments(const SyntheticConfig& cfg) {
    const int n_mal = std::clamp(round_half_up(cfg.class_balance * cfg.n_specimens), 1,
                                 cfg.n_specimens - 1);
    const int n_ben = cfg.n_specimens - n_mal;
    const int pat_mal = std::clamp(round_half_up(cfg.class_balance * cfg.n_patients), 1,
                                   cfg.n_patients - 1);
    const int pat_ben = cfg.n_patients - pat_mal;

    auto pad = [](int v, int width) {
        std::string s = std::to_string(v);
        return std::string(static_cast<size_t>(std::max(0, width - static_cast<int>(s.size()))), '0') + s;
    };

    std::vector<Assignment> out(static_cast<size_t>(cfg.n_specimens));
    for (int i = 0; i < cfg.n_specimens; ++i) {
        Assignment a;
        if (i < n_ben) {
            a.class_id = 0;
            a.patient_id = "p" + pad(i % pat_ben, 3);
        } else {
            a.class_id = 1;
            a.patient_id = "p" + pad(pat_ben + (i - n_ben) % pat_mal, 3);
        }
        a.specimen_id = "s" + pad(i, 4);
        out[static_cast<size_t>(i)] = a;
    }
    return out;
}

}  // namespace

std::vector<MagnifiedSample> generate_synthetic(const SyntheticConfig& cfg, const fs::path& out_dir) {
    if (cfg.class_balance <= 0.0 || cfg.class_balance >= 1.0)
        throw ConfigError("InvalidBalance: class_balance must lie in (0,1)");
    if (cfg.n_specimens < cfg.n_patients || cfg.n_patients < 2)
        throw ConfigError("need n_specimens >= n_patients >= 2");
    if (cfg.base_size < 640) throw ConfigError("base_size must be >= 640");

    const auto assignments = plan_assignments(cfg);
    const std::array<std::string, 2> class_names = {"benign", "malignant"};

    std::vector<MagnifiedSample> samples(assignments.size());
    std::vector<std::map<Magnification, MaskU8>> masks(assignments.size());

#pragma omp parallel for schedule(dynamic) if (kernels::parallel_enabled())
    for (int i = 0; i < static_cast<int>(assignments.size()); ++i) {
        const auto& a = assignments[static_cast<size_t>(i)];
        const CanvasSpec spec = draw_canvas_spec(cfg, i, a.class_id);
        const ImageF canvas = render_canvas(cfg, spec);
        const auto mask = render_mask(cfg, spec);

        MagnifiedSample sample(a.specimen_id, a.patient_id, a.class_id);
        for (Magnification m : kMagnifications) {
            const ViewBox box = view_box(cfg, spec, m);
            sample.images[m] = to_u8(kernels::resize_bilinear(crop(canvas, box), cfg.out_size, cfg.out_size));
            masks[static_cast<size_t>(i)][m] = crop_resize_mask(mask, cfg.base_size, box, cfg.out_size);
        }
        samples[static_cast<size_t>(i)] = std::move(sample);
    }

    if (!out_dir.empty()) {
        fs::create_directories(out_dir / "masks");
        json index;
        index["seed"] = cfg.seed;
        index["n_specimens"] = cfg.n_specimens;
        index["n_patients"] = cfg.n_patients;
        index["class_balance"] = cfg.class_balance;
        index["base_size"] = cfg.base_size;
        index["out_size"] = cfg.out_size;
        index["specimens"] = json::array();
        for (size_t i = 0; i < samples.size(); ++i) {
            auto& sample = samples[i];
            const auto& a = assignments[i];
            const fs::path spec_dir =
                out_dir / class_names[static_cast<size_t>(a.class_id)] / a.patient_id / a.specimen_id;
            json entry;
            entry["specimen_id"] = a.specimen_id;
            entry["patient_id"] = a.patient_id;
            entry["class"] = class_names[static_cast<size_t>(a.class_id)];
            for (Magnification m : kMagnifications) {
                const fs::path mf_dir = spec_dir / to_dirname(m);
                fs::create_directories(mf_dir);
                const fs::path img_path = mf_dir / (a.specimen_id + "_" + to_string(m) + ".png");
                save_png(img_path, sample.images[m]);
                sample.source_path[m] = img_path;
                save_png_gray(out_dir / "masks" / (a.specimen_id + "_" + to_string(m) + ".png"),
                              masks[i][m]);
                entry["files"][to_dirname(m)] = fs::relative(img_path, out_dir).string();
            }
            index["specimens"].push_back(entry);
        }
        std::ofstream out(out_dir / "index.json");
        out << index.dump(2) << "\n";
    }
    return samples;
}

std::map<Magnification, MaskU8> synthetic_masks(const SyntheticConfig& cfg, int specimen_index) {
    const auto assignments = plan_assignments(cfg);
    if (specimen_index < 0 || specimen_index >= static_cast<int>(assignments.size()))
        throw ConfigError("specimen index out of range");
    const auto& a = assignments[static_cast<size_t>(specimen_index)];
    const CanvasSpec spec = draw_canvas_spec(cfg, specimen_index, a.class_id);
    const auto mask = render_mask(cfg, spec);
    std::map<Magnification, MaskU8> out;
    for (Magnification m : kMagnifications)
        out[m] = crop_resize_mask(mask, cfg.base_size, view_box(cfg, spec, m), cfg.out_size);
    return out;
}

// ----------------------------------------------------------------- patches

PatchGrid make_patches(const ImageU8& image, int patch_size, int stride,
                       const std::string& parent_image_id) {
    if (stride < 1) throw ConfigError("stride must be >= 1");
    if (patch_size > std::min(image.h, image.w))
        throw ConfigError("PatchTooLarge: patch " + std::to_string(patch_size) + " exceeds image " +
                          std::to_string(image.h) + "x" + std::to_string(image.w));
    PatchGrid grid;
    grid.parent_image_id = parent_image_id;
    grid.patch_size = patch_size;
    grid.stride = stride;
    const int rows = patch_count_1d(image.h, patch_size, stride);
    const int cols = patch_count_1d(image.w, patch_size, stride);
    grid.patches.reserve(static_cast<size_t>(rows) * cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            Patch p;
            p.row = r;
            p.col = c;
            p.image = ImageU8(patch_size, patch_size);
            const int oy = r * stride, ox = c * stride;
            for (int y = 0; y < patch_size; ++y)
                for (int x = 0; x < patch_size; ++x)
                    for (int ch = 0; ch < 3; ++ch) p.image.at(y, x, ch) = image.at(oy + y, ox + x, ch);
            grid.patches.push_back(std::move(p));
        }
    return grid;
}

// ------------------------------------------------------------------- folds

std::string fraction_key(double fraction) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%.2f", fraction);
    return buf;
}

std::set<std::string> SplitPlan::fold_specimens(int fold) const {
    std::set<std::string> out;
    for (const auto& [id, f] : fold_of)
        if (f == fold) out.insert(id);
    return out;
}

std::set<std::string> SplitPlan::specimens_excluding_fold(int fold) const {
    std::set<std::string> out;
    for (const auto& [id, f] : fold_of)
        if (f != fold) out.insert(id);
    return out;
}

void SplitPlan::save(const fs::path& path) const {
    json j;
    j["k"] = k;
    j["seed"] = seed;
    j["folds"] = json::object();
    for (const auto& [id, f] : fold_of) j["folds"][id] = f;
    j["label_fractions"] = json::object();
    for (const auto& [frac, ids] : label_fractions) j["label_fractions"][frac] = ids;
    std::ofstream out(path);
    if (!out) throw DataError("cannot write split plan: " + path.string());
    out << j.dump(2) << "\n";
}

SplitPlan SplitPlan::load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read split plan: " + path.string());
    json j = json::parse(in);
    SplitPlan plan;
    plan.k = j.at("k").get<int>();
    plan.seed = j.at("seed").get<uint64_t>();
    for (const auto& [id, f] : j.at("folds").items()) plan.fold_of[id] = f.get<int>();
    for (const auto& [frac, ids] : j.at("label_fractions").items())
        plan.label_fractions[frac] = ids.get<std::vector<std::string>>();
    return plan;
}

namespace {

// Class-proportional interleave: merge per-class permutations by the key
// (rank + 0.5) / class_size. Every prefix of the merged order is stratified
// to within one specimen per class, so fraction subsets are prefixes and
// nesting across fractions is structural.
std::vector<std::string> stratified_order(
    const std::map<int, std::vector<std::string>>& ids_by_class, uint64_t seed) {
    struct Entry {
        double key;
        int class_id;
        std::string id;
    };
    std::vector<Entry> entries;
    for (const auto& [class_id, ids] : ids_by_class) {
        std::vector<std::string> perm = ids;
        std::sort(perm.begin(), perm.end());
        Rng rng = Rng::derive(seed, {0x1ABE1u, static_cast<uint64_t>(class_id)});
        rng.shuffle(perm);
        for (size_t i = 0; i < perm.size(); ++i)
            entries.push_back({(i + 0.5) / perm.size(), class_id, perm[i]});
    }
    std::stable_sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
        if (a.key != b.key) return a.key < b.key;
        return a.class_id < b.class_id;
    });
    std::vector<std::string> out;
    out.reserve(entries.size());
    for (auto& e : entries) out.push_back(std::move(e.id));
    return out;
}

}  // namespace

SplitPlan build_folds(const std::vector<MagnifiedSample>& samples, int k, uint64_t seed) {
    if (k < 2) throw ConfigError("fold count must be >= 2");
    if (samples.empty()) throw EmptyDatasetError("EmptyDataset: no samples to split");

    struct PatientInfo {
        std::string id;
        std::vector<std::string> specimens;
        std::map<int, int> class_votes;
        int majority_class() const {
            int best = -1, best_n = -1;
            for (const auto& [c, n] : class_votes)
                if (n > best_n || (n == best_n && c < best)) {
                    best = c;
                    best_n = n;
                }
            return best;
        }
    };

    std::map<std::string, PatientInfo> patients;
    std::map<int, std::vector<std::string>> specimens_by_class;
    for (const auto& s : samples) {
        auto& p = patients[s.patient_id];
        p.id = s.patient_id;
        p.specimens.push_back(s.specimen_id);
        p.class_votes[s.label()]++;
        specimens_by_class[s.label()].push_back(s.specimen_id);
    }

    std::map<int, std::vector<const PatientInfo*>> patients_by_class;
    for (const auto& [id, info] : patients) patients_by_class[info.majority_class()].push_back(&info);
    for (const auto& [class_id, plist] : patients_by_class)
        if (static_cast<int>(plist.size()) < k)
            throw DataError("TooFewPatients: class " + std::to_string(class_id) + " has " +
                            std::to_string(plist.size()) + " patients, need >= " + std::to_string(k));

    SplitPlan plan;
    plan.k = k;
    plan.seed = seed;

    std::vector<int> fold_total(static_cast<size_t>(k), 0);
    for (auto& [class_id, plist] : patients_by_class) {
        // seeded shuffle, then largest patients first so the greedy packs well
        std::vector<const PatientInfo*> order = plist;
        std::sort(order.begin(), order.end(),
                  [](const PatientInfo* a, const PatientInfo* b) { return a->id < b->id; });
        Rng rng = Rng::derive(seed, {0xF01Du, static_cast<uint64_t>(class_id)});
        rng.shuffle(order);
        std::stable_sort(order.begin(), order.end(), [](const PatientInfo* a, const PatientInfo* b) {
            return a->specimens.size() > b->specimens.size();
        });

        std::vector<int> fold_class(static_cast<size_t>(k), 0);
        for (const PatientInfo* p : order) {
            int best = 0;
            for (int f = 1; f < k; ++f) {
                if (fold_class[f] < fold_class[best] ||
                    (fold_class[f] == fold_class[best] && fold_total[f] < fold_total[best]))
                    best = f;
            }
            for (const auto& sid : p->specimens) plan.fold_of[sid] = best;
            fold_class[static_cast<size_t>(best)] += static_cast<int>(p->specimens.size());
            fold_total[static_cast<size_t>(best)] += static_cast<int>(p->specimens.size());
        }
    }

    const auto order = stratified_order(specimens_by_class, seed);
    const int total = static_cast<int>(order.size());
    for (double f : kLabelFractions) {
        const int take = std::min(total, round_half_up(f * total));
        plan.label_fractions[fraction_key(f)] =
            std::vector<std::string>(order.begin(), order.begin() + take);
    }
    return plan;
}

std::set<std::string> subsample_labels(const SplitPlan& plan,
                                       const std::vector<MagnifiedSample>& samples,
                                       const std::set<int>& train_folds, double fraction,
                                       uint64_t seed) {
    if (fraction <= 0.0 || fraction > 1.0)
        throw ConfigError("FractionOutOfRange: fraction must lie in (0,1], got " +
                          std::to_string(fraction));
    if (train_folds.empty()) throw ConfigError("train_folds must be non-empty");

    std::map<int, std::vector<std::string>> ids_by_class;
    int total = 0;
    for (const auto& s : samples) {
        auto it = plan.fold_of.find(s.specimen_id);
        if (it == plan.fold_of.end()) continue;
        if (!train_folds.count(it->second)) continue;
        ids_by_class[s.label()].push_back(s.specimen_id);
        ++total;
    }
    if (total == 0) throw DataError("EmptyLabelSubset: no specimens in the given train folds");

    const auto order = stratified_order(ids_by_class, seed);
    const int take = std::min(total, round_half_up(fraction * total));
    return {order.begin(), order.begin() + take};
}

const MagnifiedSample& find_specimen(const std::vector<MagnifiedSample>& samples,
                                     const std::string& specimen_id) {
    for (const auto& s : samples)
        if (s.specimen_id == specimen_id) return s;
    throw DataError("unknown specimen: " + specimen_id);
}

}  // namespace mpcs
