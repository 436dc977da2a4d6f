#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "micle/io.hpp"

namespace micle {

enum class TaskKind { multiclass, multilabel };
enum class Split { train, validation, test };

std::string split_name(Split s);
Split split_from_name(const std::string& s);

// A patient case: 1..M image references sharing one label.
struct Bag {
    std::string bag_id;
    std::vector<std::string> image_refs;  // resolved absolute/relative-to-cwd paths
    std::size_t label = 0;                // multiclass class index
    std::vector<int> label_bits;          // multilabel bit-vector (empty for multiclass)
    Split split = Split::train;
    std::string group;  // optional subgroup tag

    std::size_t views() const { return image_refs.size(); }
};

struct Manifest {
    std::vector<Bag> bags;
    std::vector<std::string> class_names;
    TaskKind task_kind = TaskKind::multiclass;
    std::string root_dir;  // directory of the manifest file; image paths were relative to it

    std::size_t num_classes() const { return class_names.size(); }
    std::vector<const Bag*> split_bags(Split s) const;
};

// JSONL, one bag per line:
//   {"bag_id": str, "images": [str,...], "label": int | [int,...],
//    "split": "train"|"validation"|"test", "group": str?}
// Multilabel manifests use a 0/1 bit-vector for "label". Class names are
// synthesized as class_0..class_{K-1}.
Manifest load_manifest(const std::string& path);
void save_manifest(const std::string& path, const Manifest& manifest);

// Stratified, seeded subset of the train split; validation/test untouched.
// Bags are ranked per class by a seeded hash and prefixes taken, so subsets
// nest across fractions under the same seed.
Manifest subset_by_fraction(const Manifest& manifest, double fraction, std::uint64_t seed);

struct CorpusSpec {
    std::size_t num_classes = 8;
    std::size_t bags_per_class = 50;
    std::size_t views_min = 2;
    std::size_t views_max = 4;
    std::size_t image_height = 40;
    std::size_t image_width = 40;
    std::uint64_t seed = 42;
    std::string out_dir;
    // Split fractions over bags of each class; remainder goes to test.
    double train_fraction = 0.70;
    double validation_fraction = 0.15;
};

// Renders a deterministic multi-view corpus: per bag a class-determined
// pattern drawn M times under nuisance transforms (position shift, lighting
// scale, background noise, per-view motif variant). Writes PPMs plus
// manifest.jsonl under spec.out_dir and returns the loaded manifest.
Manifest generate_synthetic_corpus(const CorpusSpec& spec);

// Loads and caches decoded images by path. Single-owner per training loop.
class ImageCache {
public:
    const Image& get(const std::string& path);

private:
    std::map<std::string, Image> cache_;
};

}  // namespace micle
