#include "micle/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "micle/rng.hpp"

namespace micle {

namespace fs = std::filesystem;
using nlohmann::json;

std::string split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::validation: return "validation";
        case Split::test: return "test";
    }
    return "train";
}

Split split_from_name(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "validation") return Split::validation;
    if (s == "test") return Split::test;
    throw ValidationError("unknown split name: " + s);
}

std::vector<const Bag*> Manifest::split_bags(Split s) const {
    std::vector<const Bag*> out;
    for (const auto& b : bags) {
        if (b.split == s) out.push_back(&b);
    }
    return out;
}

Manifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open manifest: " + path);
    Manifest m;
    m.root_dir = fs::path(path).parent_path().string();

    std::set<std::string> seen_ids;
    bool saw_int_label = false;
    bool saw_vec_label = false;
    std::size_t max_label = 0;
    std::size_t vec_len = 0;

    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            throw ValidationError("manifest parse error at line " + std::to_string(line_no) +
                                  ": " + e.what());
        }
        Bag bag;
        try {
            bag.bag_id = rec.at("bag_id").get<std::string>();
            for (const auto& img : rec.at("images")) {
                const std::string rel = img.get<std::string>();
                bag.image_refs.push_back((fs::path(m.root_dir) / rel).string());
            }
            const auto& label = rec.at("label");
            if (label.is_number_integer()) {
                const long long v = label.get<long long>();
                if (v < 0) throw ValidationError("negative label");
                bag.label = static_cast<std::size_t>(v);
                saw_int_label = true;
                max_label = std::max(max_label, bag.label);
            } else if (label.is_array()) {
                for (const auto& bit : label) {
                    const int v = bit.get<int>();
                    if (v != 0 && v != 1) throw ValidationError("multilabel bits must be 0/1");
                    bag.label_bits.push_back(v);
                }
                saw_vec_label = true;
                if (vec_len == 0) vec_len = bag.label_bits.size();
            } else {
                throw ValidationError("label must be an integer or a bit-vector");
            }
            bag.split = split_from_name(rec.at("split").get<std::string>());
            if (rec.contains("group")) bag.group = rec.at("group").get<std::string>();
        } catch (const ValidationError&) {
            throw;
        } catch (const json::exception& e) {
            throw ValidationError("manifest schema error at line " + std::to_string(line_no) +
                                  ": " + e.what());
        }
        if (bag.image_refs.empty()) {
            throw ValidationError("bag '" + bag.bag_id + "' has no images (line " +
                                  std::to_string(line_no) + ")");
        }
        if (!seen_ids.insert(bag.bag_id).second) {
            throw ValidationError("duplicate bag_id '" + bag.bag_id + "' (line " +
                                  std::to_string(line_no) + ")");
        }
        m.bags.push_back(std::move(bag));
    }
    if (m.bags.empty()) throw ValidationError("manifest is empty: " + path);
    if (saw_int_label && saw_vec_label) {
        throw ValidationError("manifest mixes multiclass and multilabel records");
    }
    m.task_kind = saw_vec_label ? TaskKind::multilabel : TaskKind::multiclass;
    std::size_t num_classes = saw_vec_label ? vec_len : max_label + 1;
    for (const auto& b : m.bags) {
        if (saw_vec_label && b.label_bits.size() != vec_len) {
            throw ValidationError("bag '" + b.bag_id + "' has inconsistent label length");
        }
        for (const auto& ref : b.image_refs) {
            if (!fs::exists(ref)) {
                throw ValidationError("bag '" + b.bag_id + "' references missing image: " + ref);
            }
        }
    }
    m.class_names.reserve(num_classes);
    for (std::size_t k = 0; k < num_classes; ++k) m.class_names.push_back("class_" + std::to_string(k));
    return m;
}

void save_manifest(const std::string& path, const Manifest& manifest) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ValidationError("cannot write manifest: " + path);
    const fs::path root = fs::path(path).parent_path();
    for (const auto& b : manifest.bags) {
        json rec;
        rec["bag_id"] = b.bag_id;
        json imgs = json::array();
        for (const auto& ref : b.image_refs) {
            imgs.push_back(fs::relative(fs::path(ref), root).string());
        }
        rec["images"] = imgs;
        if (manifest.task_kind == TaskKind::multilabel) {
            rec["label"] = b.label_bits;
        } else {
            rec["label"] = b.label;
        }
        rec["split"] = split_name(b.split);
        if (!b.group.empty()) rec["group"] = b.group;
        out << rec.dump() << "\n";
    }
}

namespace {

// Stratification key: class index for multiclass, label pattern for multilabel.
std::string strat_key(const Manifest& m, const Bag& b) {
    if (m.task_kind == TaskKind::multiclass) return std::to_string(b.label);
    std::string key;
    for (int v : b.label_bits) key.push_back(v ? '1' : '0');
    return key;
}

}  // namespace

Manifest subset_by_fraction(const Manifest& manifest, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0)) {
        throw UsageError("label fraction must be in (0,1], got " + std::to_string(fraction));
    }
    // Rank train bags per class by seeded hash; keep the prefix of each class.
    std::map<std::string, std::vector<const Bag*>> per_class;
    for (const auto& b : manifest.bags) {
        if (b.split == Split::train) per_class[strat_key(manifest, b)].push_back(&b);
    }
    std::set<std::string> keep;
    for (auto& [key, bags] : per_class) {
        std::stable_sort(bags.begin(), bags.end(), [&](const Bag* a, const Bag* b) {
            return hash_combine(seed, hash_str(a->bag_id)) <
                   hash_combine(seed, hash_str(b->bag_id));
        });
        const std::size_t n = bags.size();
        const std::size_t take =
            std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n))));
        for (std::size_t i = 0; i < std::min(take, n); ++i) keep.insert(bags[i]->bag_id);
    }
    Manifest out;
    out.class_names = manifest.class_names;
    out.task_kind = manifest.task_kind;
    out.root_dir = manifest.root_dir;
    for (const auto& b : manifest.bags) {
        if (b.split != Split::train || keep.count(b.bag_id)) out.bags.push_back(b);
    }
    return out;
}

namespace {

// HSV (s=1) to RGB; h in [0,1).
void hue_to_rgb(double h, double v, float rgb[3]) {
    const double hh = h * 6.0;
    const int sector = static_cast<int>(hh) % 6;
    const double f = hh - std::floor(hh);
    const double p = 0.0, q = v * (1.0 - f), t = v * f;
    double r = 0, g = 0, b = 0;
    switch (sector) {
        case 0: r = v; g = t; b = p; break;
        case 1: r = q; g = v; b = p; break;
        case 2: r = p; g = v; b = t; break;
        case 3: r = p; g = q; b = v; break;
        case 4: r = t; g = p; b = v; break;
        default: r = v; g = p; b = q; break;
    }
    rgb[0] = static_cast<float>(r);
    rgb[1] = static_cast<float>(g);
    rgb[2] = static_cast<float>(b);
}

// Coverage of the class motif at (px,py) in {0,1}. The shape family is the
// class signal; the motif index varies secondary geometry within the class.
double motif_coverage(std::size_t shape_family, std::size_t motif, double px, double py,
                      double cx, double cy, double radius, double angle) {
    const double dx = px - cx;
    const double dy = py - cy;
    // rotate into motif frame
    const double ca = std::cos(angle), sa = std::sin(angle);
    const double rx = ca * dx + sa * dy;
    const double ry = -sa * dx + ca * dy;
    const double dist = std::sqrt(rx * rx + ry * ry);
    const double m3 = static_cast<double>(motif % 3);
    switch (shape_family % 8) {
        case 0: {  // filled disk, variant size
            return dist < radius * (0.75 + 0.12 * m3) ? 1.0 : 0.0;
        }
        case 1: {  // ring, variant thickness
            const double inner = radius * (0.45 + 0.12 * m3);
            return (dist < radius && dist > inner) ? 1.0 : 0.0;
        }
        case 2: {  // cross, variant arm width
            const double arm = radius * (0.18 + 0.08 * m3);
            const bool in = (std::abs(rx) < arm && std::abs(ry) < radius) ||
                            (std::abs(ry) < arm && std::abs(rx) < radius);
            return in ? 1.0 : 0.0;
        }
        case 3: {  // parallel bars, variant count
            if (std::abs(rx) > radius || std::abs(ry) > radius) return 0.0;
            const int bars = 2 + static_cast<int>(motif % 3);
            const double phase = (ry + radius) / (2.0 * radius) * bars;
            return (phase - std::floor(phase)) < 0.55 ? 1.0 : 0.0;
        }
        case 4: {  // two lobes, variant separation
            const double lobe = radius * 0.48;
            const double off = radius * (0.5 + 0.12 * m3);
            return (std::hypot(rx - off, ry) < lobe || std::hypot(rx + off, ry) < lobe) ? 1.0
                                                                                        : 0.0;
        }
        case 5: {  // square outline, variant thickness
            const double half = radius * 0.85;
            const double inner = half * (0.45 + 0.12 * m3);
            const double cheb = std::max(std::abs(rx), std::abs(ry));
            return (cheb < half && cheb > inner) ? 1.0 : 0.0;
        }
        case 6: {  // four dots, variant spread
            const double off = radius * (0.55 + 0.12 * m3);
            const double dot = radius * 0.30;
            return (std::hypot(std::abs(rx) - off, std::abs(ry) - off) < dot) ? 1.0 : 0.0;
        }
        default: {  // filled triangle, variant size
            const double s = radius * (1.1 + 0.15 * m3);
            // equilateral triangle centered at the origin
            const double y0 = ry + s * 0.35;
            const bool in = y0 > 0.0 && y0 < s * 0.9 && std::abs(rx) < (s * 0.9 - y0) * 0.65;
            return in ? 1.0 : 0.0;
        }
    }
}

}  // namespace

Manifest generate_synthetic_corpus(const CorpusSpec& spec) {
    if (spec.num_classes == 0 || spec.bags_per_class == 0 || spec.views_min == 0 ||
        spec.views_max < spec.views_min || spec.image_height == 0 || spec.image_width == 0) {
        throw UsageError("corpus spec requires positive counts and views_min <= views_max");
    }
    fs::create_directories(spec.out_dir);
    fs::create_directories(fs::path(spec.out_dir) / "images");

    const std::size_t H = spec.image_height, W = spec.image_width;
    std::ofstream mf(fs::path(spec.out_dir) / "manifest.jsonl", std::ios::trunc);
    if (!mf) throw ValidationError("cannot write manifest in " + spec.out_dir);

    for (std::size_t cls = 0; cls < spec.num_classes; ++cls) {
        const std::size_t shape_family = cls;

        // Per-class split assignment over bag indices, seeded.
        std::vector<std::size_t> order(spec.bags_per_class);
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng split_rng(hash_combine(spec.seed, hash_combine(0x5EED5 + cls, 1)));
        split_rng.shuffle(order);
        const std::size_t n_train = static_cast<std::size_t>(
            std::round(spec.train_fraction * static_cast<double>(spec.bags_per_class)));
        const std::size_t n_val = static_cast<std::size_t>(
            std::round(spec.validation_fraction * static_cast<double>(spec.bags_per_class)));
        std::vector<Split> split_of(spec.bags_per_class, Split::test);
        for (std::size_t i = 0; i < order.size(); ++i) {
            if (i < n_train) split_of[order[i]] = Split::train;
            else if (i < n_train + n_val) split_of[order[i]] = Split::validation;
        }

        for (std::size_t bag_idx = 0; bag_idx < spec.bags_per_class; ++bag_idx) {
            const std::string bag_id =
                "c" + std::to_string(cls) + "_b" + std::to_string(bag_idx);
            Rng bag_rng(derive_seed(spec.seed, 0, bag_id, 0, "corpus"));
            // Motif hue is class-linked but jittered per bag by most of a
            // class-width: neighboring classes overlap heavily, so color is
            // a weak cue and shape carries the rest.
            const double class_hue =
                static_cast<double>(cls) / static_cast<double>(spec.num_classes);
            double hue = class_hue + bag_rng.uniform(-0.8, 0.8) /
                                         static_cast<double>(spec.num_classes);
            hue -= std::floor(hue);
            const double cx = bag_rng.uniform(0.32, 0.68) * static_cast<double>(W);
            const double cy = bag_rng.uniform(0.32, 0.68) * static_cast<double>(H);
            const double radius = bag_rng.uniform(0.18, 0.25) * static_cast<double>(std::min(H, W));
            const double bg_freq = bag_rng.uniform(1.5, 4.0);
            const double bg_angle = bag_rng.uniform(0.0, 3.14159265358979);
            const double bag_light = bag_rng.uniform(0.75, 1.0);
            double bag_tint[3];
            for (double& t : bag_tint) t = bag_rng.uniform(0.85, 1.15);
            const std::size_t views =
                spec.views_min + static_cast<std::size_t>(bag_rng.below(
                                     spec.views_max - spec.views_min + 1));

            json rec;
            rec["bag_id"] = bag_id;
            json imgs = json::array();
            for (std::size_t v = 0; v < views; ++v) {
                Rng view_rng(derive_seed(spec.seed, 0, bag_id, v + 1, "corpus_view"));
                const std::size_t motif = static_cast<std::size_t>(view_rng.below(3));
                const double jitter_x = view_rng.uniform(-0.10, 0.10) * static_cast<double>(W);
                const double jitter_y = view_rng.uniform(-0.10, 0.10) * static_cast<double>(H);
                // moderate viewpoint rotation; shapes keep a rough canonical
                // orientation so few-shot supervision stays feasible
                const double angle = view_rng.uniform(-0.44, 0.44);
                const double light = bag_light * view_rng.uniform(0.5, 1.0);
                const double noise_sd = view_rng.uniform(0.05, 0.12);
                const double bg_phase = view_rng.uniform(0.0, 6.28318530717959);

                // Colored distractor disks: class-uncorrelated clutter that
                // corrupts raw color statistics but never dominates the motif.
                struct Distractor {
                    double x, y, r;
                    float rgb[3];
                };
                std::vector<Distractor> distractors(2 + view_rng.below(2));
                for (auto& d : distractors) {
                    d.x = view_rng.uniform(0.08, 0.92) * static_cast<double>(W);
                    d.y = view_rng.uniform(0.08, 0.92) * static_cast<double>(H);
                    d.r = view_rng.uniform(0.35, 0.55) * radius;
                    hue_to_rgb(view_rng.u01(), 1.0, d.rgb);
                }

                float rgb[3];
                hue_to_rgb(hue, 1.0, rgb);

                Image img;
                img.channels = 3;
                img.height = H;
                img.width = W;
                img.data.resize(3 * H * W);
                for (std::size_t y = 0; y < H; ++y) {
                    for (std::size_t x = 0; x < W; ++x) {
                        const double px = static_cast<double>(x);
                        const double py = static_cast<double>(y);
                        const double wave =
                            std::sin(bg_phase + bg_freq * 6.28318530717959 *
                                                    (px * std::cos(bg_angle) +
                                                     py * std::sin(bg_angle)) /
                                                    static_cast<double>(W));
                        const double bg = 0.38 + 0.10 * wave;
                        double base[3] = {bg * bag_tint[0], bg * bag_tint[1], bg * bag_tint[2]};
                        for (const auto& d : distractors) {
                            if (std::hypot(px - d.x, py - d.y) < d.r) {
                                for (std::size_t c = 0; c < 3; ++c) {
                                    base[c] = 0.30 + 0.60 * d.rgb[c];
                                }
                            }
                        }
                        const double cov = motif_coverage(shape_family, motif, px, py,
                                                          cx + jitter_x, cy + jitter_y, radius,
                                                          angle);
                        for (std::size_t c = 0; c < 3; ++c) {
                            double val = base[c] * (1.0 - cov) + cov * (0.25 + 0.75 * rgb[c]);
                            val = val * light + noise_sd * view_rng.normal();
                            img.at(c, y, x) =
                                static_cast<float>(std::clamp(val, 0.0, 1.0));
                        }
                    }
                }
                const std::string rel = "images/" + bag_id + "_v" + std::to_string(v) + ".ppm";
                write_ppm((fs::path(spec.out_dir) / rel).string(), img);
                imgs.push_back(rel);
            }
            rec["images"] = imgs;
            rec["label"] = cls;
            rec["split"] = split_name(split_of[bag_idx]);
            mf << rec.dump() << "\n";
        }
    }
    mf.close();
    return load_manifest((fs::path(spec.out_dir) / "manifest.jsonl").string());
}

const Image& ImageCache::get(const std::string& path) {
    auto it = cache_.find(path);
    if (it != cache_.end()) return it->second;
    return cache_.emplace(path, decode_image(path)).first->second;
}

}  // namespace micle
