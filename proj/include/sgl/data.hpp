#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "sgl/labels.hpp"
#include "sgl/rng.hpp"
#include "sgl/tensor.hpp"

namespace sgl {

// A pool of labeled single-factor inputs. Loaders and synthesizers scale all
// pixel values into [-0.5, 0.5]; every class must own at least one item.
struct FactorSource {
    std::string name;
    std::string origin; // idx-file | cifar-binary | synthetic-generator
    Shape item_shape;
    int class_count = 0;
    Tensor items; // [N, item_shape...]
    std::vector<int> labels;
    std::vector<std::vector<int>> class_index;
    std::uint64_t checksum = 0;

    int size() const { return items.numel() == 0 ? 0 : items.dim(0); }

    // Builds the class index and enforces the source invariants.
    void finalize() {
        const int n = size();
        if (n < 1) throw DataError("source " + name + " is empty");
        if (static_cast<int>(labels.size()) != n)
            throw DataError("source " + name + ": " + std::to_string(labels.size()) +
                            " labels for " + std::to_string(n) + " items");
        class_index.assign(static_cast<std::size_t>(class_count), {});
        for (int i = 0; i < n; ++i) {
            const int c = labels[static_cast<std::size_t>(i)];
            if (c < 0 || c >= class_count)
                throw DataError("source " + name + ": label " + std::to_string(c) +
                                " outside [0, " + std::to_string(class_count) + ")");
            class_index[static_cast<std::size_t>(c)].push_back(i);
        }
        for (int c = 0; c < class_count; ++c)
            if (class_index[static_cast<std::size_t>(c)].empty())
                throw DataError("source " + name + ": class " + std::to_string(c) +
                                " has no items");
        for (double v : items.data)
            if (v < -0.5 || v > 0.5)
                throw ValidationError("source " + name + ": value " + std::to_string(v) +
                                      " outside [-0.5, 0.5]");
        checksum = tensor_checksum(items) ^
                   mix64(fnv1a(labels.data(), labels.size() * sizeof(int)));
    }
};

enum class Scheme : std::uint8_t { Diagonal, Tile, OneLabel, NewClasses, Manual };

inline std::string scheme_name(Scheme s) {
    switch (s) {
    case Scheme::Diagonal: return "diagonal";
    case Scheme::Tile: return "tile";
    case Scheme::OneLabel: return "one-label";
    case Scheme::NewClasses: return "new-classes";
    case Scheme::Manual: return "manual";
    }
    return "?";
}

inline Scheme scheme_from_name(const std::string& s) {
    if (s == "diagonal") return Scheme::Diagonal;
    if (s == "tile") return Scheme::Tile;
    if (s == "one-label") return Scheme::OneLabel;
    if (s == "new-classes") return Scheme::NewClasses;
    throw ValidationError("unknown split scheme: " + s);
}

struct LabelSplit {
    Scheme scheme = Scheme::Manual;
    int c1 = 0;
    int c2 = 0; // 0 for single-factor splits
    TupleSet train_combos;
    TupleSet test_combos;
};

// Disjointness always; factor coverage (every factor value reachable in test
// already appears in training) except for new-classes, which deliberately
// withholds whole classes.
inline void validate_split(const LabelSplit& split) {
    for (const LabelTuple& t : split.test_combos)
        if (split.train_combos.count(t))
            throw ValidationError("split combo " + tuple_to_string(t) +
                                  " is in both train and test sets");
    if (split.scheme == Scheme::NewClasses) return;
    std::size_t arity = 0;
    for (const LabelTuple& t : split.train_combos) arity = t.size();
    std::vector<std::set<int>> seen(arity);
    for (const LabelTuple& t : split.train_combos)
        for (std::size_t f = 0; f < arity; ++f) seen[f].insert(t[f]);
    for (const LabelTuple& t : split.test_combos)
        for (std::size_t f = 0; f < arity; ++f)
            if (!seen[f].count(t[f]))
                throw ValidationError("test combo " + tuple_to_string(t) + " uses factor-" +
                                      std::to_string(f) + " value never seen in training");
}

inline LabelSplit make_label_split(Scheme scheme, int c1, int c2) {
    if (c1 < 1) throw ValidationError("class count c1 must be >= 1");
    if (scheme != Scheme::NewClasses && c2 < 1)
        throw ValidationError("class count c2 must be >= 1");
    LabelSplit split;
    split.scheme = scheme;
    split.c1 = c1;
    split.c2 = scheme == Scheme::NewClasses ? 0 : c2;
    switch (scheme) {
    case Scheme::Diagonal: {
        const int band = std::max(1, c2 / 2);
        for (int y1 = 0; y1 < c1; ++y1)
            for (int y2 = 0; y2 < c2; ++y2)
                (((y2 - y1) % c2 + c2) % c2 < band ? split.train_combos : split.test_combos)
                    .insert({y1, y2});
        break;
    }
    case Scheme::Tile: {
        const int b1 = std::max(1, c1 / 2), b2 = std::max(1, c2 / 2);
        for (int y1 = 0; y1 < c1; ++y1)
            for (int y2 = 0; y2 < c2; ++y2)
                ((y1 < b1 || y2 < b2) ? split.train_combos : split.test_combos).insert({y1, y2});
        break;
    }
    case Scheme::OneLabel: {
        for (int y1 = 0; y1 < c1; ++y1)
            for (int y2 = 0; y2 < c2; ++y2)
                ((y1 < c1 - 1 || y2 < 1) ? split.train_combos : split.test_combos)
                    .insert({y1, y2});
        break;
    }
    case Scheme::NewClasses: {
        // One binary node per class; a sample's tuple is the one-hot row its
        // ten nodes would have to emit, so held-out classes stay comparable
        // with thresholded predictions.
        const int cut = std::max(1, c1 / 2);
        for (int y = 0; y < c1; ++y)
            (y < cut ? split.train_combos : split.test_combos).insert(one_hot_tuple(c1, y));
        break;
    }
    case Scheme::Manual:
        throw ValidationError("manual splits are built directly, not by scheme name");
    }
    validate_split(split);
    return split;
}

enum class MergeMode : std::uint8_t { Average, ChannelConcat, Coords };
enum class Role : std::uint8_t { Train, Test };

inline std::string merge_mode_name(MergeMode m) {
    switch (m) {
    case MergeMode::Average: return "average";
    case MergeMode::ChannelConcat: return "channel-concat";
    case MergeMode::Coords: return "coords";
    }
    return "?";
}

inline MergeMode merge_mode_from_name(const std::string& s) {
    if (s == "average") return MergeMode::Average;
    if (s == "channel-concat") return MergeMode::ChannelConcat;
    throw ValidationError("unknown merge mode: " + s);
}

struct PairDataset {
    Tensor inputs; // [N, merged shape...]; default tensor when empty
    std::vector<LabelTuple> labels;
    LabelSplit split;
    MergeMode merge_mode = MergeMode::Average;
    Role role = Role::Train;

    int size() const { return static_cast<int>(labels.size()); }

    const TupleSet& own_combos() const {
        return role == Role::Train ? split.train_combos : split.test_combos;
    }
};

// Every sampled tuple must come from the dataset's own side of the split.
inline void check_dataset_against_split(const PairDataset& ds) {
    const TupleSet& allowed = ds.own_combos();
    for (const LabelTuple& t : ds.labels)
        if (!allowed.count(t))
            throw ValidationError("dataset carries combo " + tuple_to_string(t) +
                                  " outside its role");
}

// Uniform pair sampler. The first factor is drawn uniformly over the values
// present on this side of the split, the second uniformly over that value's
// allowed partners, and items uniformly within their class. Callers pass the
// portion-matched sources (train pools for the train role, held-out pools for
// test); this function does not slice sources itself.
inline PairDataset sample_pair(const LabelSplit& split, const FactorSource& a,
                               const FactorSource& b, MergeMode merge, Role role, int n,
                               Rng& rng) {
    if (merge == MergeMode::Coords)
        throw ValidationError("coords datasets come from the 2d synthesizer, not sample_pair");
    PairDataset ds;
    ds.split = split;
    ds.merge_mode = merge;
    ds.role = role;
    if (n == 0) return ds;
    if (n < 0) throw ValidationError("negative sample count");
    const TupleSet& combos = role == Role::Train ? split.train_combos : split.test_combos;
    if (combos.empty())
        throw DataError(std::string("no ") + (role == Role::Train ? "train" : "test") +
                        " combos to sample from");

    std::vector<int> y1_domain;
    std::map<int, std::vector<int>> partners;
    for (const LabelTuple& t : combos) {
        if (t.size() != 2)
            throw ValidationError("sample_pair needs two-factor splits, got arity " +
                                  std::to_string(t.size()));
        if (!partners.count(t[0])) y1_domain.push_back(t[0]);
        partners[t[0]].push_back(t[1]);
    }
    for (int y1 : y1_domain)
        if (y1 >= a.class_count)
            throw DataError("source " + a.name + " has no class " + std::to_string(y1));
    for (const auto& [y1, ys] : partners)
        for (int y2 : ys)
            if (y2 >= b.class_count)
                throw DataError("source " + b.name + " has no class " + std::to_string(y2));

    Shape merged_shape;
    if (merge == MergeMode::Average) {
        if (a.item_shape != b.item_shape)
            throw DimensionError("average merge needs equal item shapes, got " +
                                 shape_to_string(a.item_shape) + " vs " +
                                 shape_to_string(b.item_shape));
        merged_shape = a.item_shape;
    } else {
        if (a.item_shape.size() != 3 || b.item_shape.size() != 3 ||
            a.item_shape[0] != b.item_shape[0] || a.item_shape[1] != b.item_shape[1])
            throw DimensionError("channel-concat needs [H, W, C] items with equal H, W, got " +
                                 shape_to_string(a.item_shape) + " vs " +
                                 shape_to_string(b.item_shape));
        merged_shape = Shape{a.item_shape[0], a.item_shape[1],
                             a.item_shape[2] + b.item_shape[2]};
    }

    Shape batch_shape{n};
    for (int d : merged_shape) batch_shape.push_back(d);
    ds.inputs = Tensor(batch_shape);
    ds.labels.reserve(static_cast<std::size_t>(n));

    const std::int64_t item_a = shape_numel(a.item_shape);
    const std::int64_t item_b = shape_numel(b.item_shape);
    const std::int64_t row = shape_numel(merged_shape);
    for (int i = 0; i < n; ++i) {
        const int y1 = y1_domain[static_cast<std::size_t>(
            rng.uniform_int(static_cast<int>(y1_domain.size())))];
        const std::vector<int>& allowed = partners.at(y1);
        const int y2 = allowed[static_cast<std::size_t>(
            rng.uniform_int(static_cast<int>(allowed.size())))];
        const std::vector<int>& bucket_a = a.class_index[static_cast<std::size_t>(y1)];
        const std::vector<int>& bucket_b = b.class_index[static_cast<std::size_t>(y2)];
        const int ia = bucket_a[static_cast<std::size_t>(
            rng.uniform_int(static_cast<int>(bucket_a.size())))];
        const int ib = bucket_b[static_cast<std::size_t>(
            rng.uniform_int(static_cast<int>(bucket_b.size())))];
        const double* pa = a.items.data.data() + ia * item_a;
        const double* pb = b.items.data.data() + ib * item_b;
        double* out = ds.inputs.data.data() + i * row;
        if (merge == MergeMode::Average) {
            for (std::int64_t j = 0; j < row; ++j) out[j] = 0.5 * (pa[j] + pb[j]);
        } else {
            const int hw = merged_shape[0] * merged_shape[1];
            const int ca = a.item_shape[2], cb = b.item_shape[2];
            for (int p = 0; p < hw; ++p) {
                for (int c = 0; c < ca; ++c) out[p * (ca + cb) + c] = pa[p * ca + c];
                for (int c = 0; c < cb; ++c) out[p * (ca + cb) + ca + c] = pb[p * cb + c];
            }
        }
        ds.labels.push_back({y1, y2});
    }
    return ds;
}

// Single-source datasets carry one-hot labels; used by the new-classes
// protocol where the split partitions one source's classes.
inline PairDataset sample_single(const LabelSplit& split, const FactorSource& src, Role role,
                                 int n, Rng& rng) {
    PairDataset ds;
    ds.split = split;
    ds.merge_mode = MergeMode::Average;
    ds.role = role;
    if (n == 0) return ds;
    if (n < 0) throw ValidationError("negative sample count");
    const TupleSet& combos = ds.own_combos();
    if (combos.empty())
        throw ValidationError("split has no combinations on the requested side");
    std::vector<int> classes;
    for (const LabelTuple& t : combos) {
        const int c = hot_index(t);
        if (c < 0)
            throw ValidationError("sample_single needs a one-hot split, got combo " +
                                  tuple_to_string(t));
        classes.push_back(c);
    }
    for (int c : classes) {
        if (c >= src.class_count || src.class_index[static_cast<std::size_t>(c)].empty())
            throw DataError("source " + src.name + " cannot supply class " + std::to_string(c));
    }

    Shape batch_shape{n};
    for (int d : src.item_shape) batch_shape.push_back(d);
    ds.inputs = Tensor(batch_shape);
    ds.labels.reserve(static_cast<std::size_t>(n));
    const std::int64_t item = shape_numel(src.item_shape);
    for (int i = 0; i < n; ++i) {
        const int y = classes[static_cast<std::size_t>(
            rng.uniform_int(static_cast<int>(classes.size())))];
        const std::vector<int>& bucket = src.class_index[static_cast<std::size_t>(y)];
        const int idx = bucket[static_cast<std::size_t>(
            rng.uniform_int(static_cast<int>(bucket.size())))];
        std::copy_n(src.items.data.data() + idx * item, item,
                    ds.inputs.data.data() + i * item);
        ds.labels.push_back(one_hot_tuple(split.c1, y));
    }
    return ds;
}

inline Tensor random_input(const Shape& shape, Rng& rng) {
    Tensor t(shape);
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-0.5, 0.5);
    return t;
}

// ---------------------------------------------------------------------------
// 2D synthetic cases: coordinates in [-1, 1]^2 with two binary factors. The
// held-out combination is (1, 0) for every case; cases a, b, c vary the blob
// layout, case d reuses layout a (it differs downstream by training for a
// single step only), spiral-xor pairs a two-arm spiral with a quadrant rule.
inline LabelTuple synth2d_new_combo() { return {1, 0}; }

inline LabelSplit synth2d_split() {
    LabelSplit split;
    split.scheme = Scheme::Manual;
    split.c1 = 2;
    split.c2 = 2;
    split.train_combos = {{0, 0}, {0, 1}, {1, 1}};
    split.test_combos = {{1, 0}};
    validate_split(split);
    return split;
}

inline PairDataset synth2d(const std::string& kind, int n, Rng& rng) {
    if (n < 1) throw ValidationError("synth2d needs n >= 1");
    PairDataset ds;
    ds.split = synth2d_split();
    ds.merge_mode = MergeMode::Coords;
    ds.role = Role::Train;
    ds.inputs = Tensor(Shape{n, 2});
    ds.labels.reserve(static_cast<std::size_t>(n));

    struct Cluster {
        double cx, cy, sigma;
        LabelTuple combo;
    };
    std::vector<Cluster> clusters;
    if (kind == "blobs-a" || kind == "blobs-d") {
        clusters = {{0.55, 0.55, 0.12, {1, 1}},
                    {-0.55, -0.55, 0.12, {0, 0}},
                    {-0.55, 0.55, 0.12, {0, 1}}};
    } else if (kind == "blobs-b") {
        clusters = {{0.65, 0.10, 0.10, {1, 1}},
                    {-0.10, -0.65, 0.10, {0, 0}},
                    {-0.60, 0.60, 0.10, {0, 1}}};
    } else if (kind == "blobs-c") {
        clusters = {{0.25, 0.70, 0.10, {1, 1}},
                    {0.70, 0.25, 0.10, {1, 1}},
                    {-0.55, -0.55, 0.10, {0, 0}},
                    {-0.55, 0.55, 0.10, {0, 1}}};
    } else if (kind == "spiral-xor") {
        for (int i = 0; i < n; ++i) {
            double x = 0.0, y = 0.0;
            LabelTuple combo;
            // rejection keeps the held-out combination out of training
            do {
                const int arm = rng.uniform_int(2);
                const double t = rng.uniform();
                const double theta = 3.0 * 3.14159265358979323846 * t;
                const double r = 0.95 * t;
                const double phi = theta + (arm == 1 ? 3.14159265358979323846 : 0.0);
                x = std::clamp(r * std::cos(phi) + rng.normal(0.0, 0.02), -1.0, 1.0);
                y = std::clamp(r * std::sin(phi) + rng.normal(0.0, 0.02), -1.0, 1.0);
                combo = {arm, x * y > 0.0 ? 1 : 0};
            } while (combo == synth2d_new_combo());
            ds.inputs.at2(i, 0) = x;
            ds.inputs.at2(i, 1) = y;
            ds.labels.push_back(combo);
        }
        check_dataset_against_split(ds);
        return ds;
    } else {
        throw ValidationError("unknown synth2d case: " + kind);
    }

    for (int i = 0; i < n; ++i) {
        const Cluster& c = clusters[static_cast<std::size_t>(i) % clusters.size()];
        ds.inputs.at2(i, 0) = std::clamp(rng.normal(c.cx, c.sigma), -1.0, 1.0);
        ds.inputs.at2(i, 1) = std::clamp(rng.normal(c.cy, c.sigma), -1.0, 1.0);
        ds.labels.push_back(c.combo);
    }
    check_dataset_against_split(ds);
    return ds;
}

// ---------------------------------------------------------------------------
// File loaders. Both fail closed: any structural problem raises ParseError
// with the byte offset and leaves no partial source behind.

namespace detail {

inline std::string read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

inline std::uint32_t read_be32(const std::string& bytes, std::size_t off,
                               const std::string& path) {
    if (off + 4 > bytes.size())
        throw ParseError(path + ": truncated at byte " + std::to_string(bytes.size()) +
                         ", needed 4 bytes at offset " + std::to_string(off));
    const auto b = [&](std::size_t i) {
        return static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[off + i]));
    };
    return (b(0) << 24) | (b(1) << 16) | (b(2) << 8) | b(3);
}

// train-images-idx3-ubyte -> train-labels-idx1-ubyte (same for t10k and for
// names using dots instead of dashes).
inline std::string derive_idx_labels_path(const std::string& images_path) {
    std::string p = images_path;
    const std::size_t at = p.rfind("images");
    if (at == std::string::npos)
        throw DataError("cannot derive labels path from " + images_path +
                        ": expected 'images' in the file name");
    p.replace(at, 6, "labels");
    const std::size_t idx = p.rfind("idx3");
    if (idx != std::string::npos) p.replace(idx, 4, "idx1");
    return p;
}

} // namespace detail

// Reads an IDX image file plus its sibling label file (derived naming, or
// pass the label path explicitly). Pixels scale to [-0.5, 0.5].
inline FactorSource load_idx(const std::string& images_path, std::string labels_path = "") {
    if (labels_path.empty()) labels_path = detail::derive_idx_labels_path(images_path);
    const std::string img = detail::read_file_bytes(images_path);
    if (detail::read_be32(img, 0, images_path) != 0x00000803u)
        throw ParseError(images_path + ": bad IDX image magic at byte 0");
    const std::uint32_t n = detail::read_be32(img, 4, images_path);
    const std::uint32_t h = detail::read_be32(img, 8, images_path);
    const std::uint32_t w = detail::read_be32(img, 12, images_path);
    const std::size_t want = 16 + static_cast<std::size_t>(n) * h * w;
    if (img.size() != want)
        throw ParseError(images_path + ": expected " + std::to_string(want) +
                         " bytes, found " + std::to_string(img.size()) + " (diverges at byte " +
                         std::to_string(std::min(img.size(), want)) + ")");

    const std::string lab = detail::read_file_bytes(labels_path);
    if (detail::read_be32(lab, 0, labels_path) != 0x00000801u)
        throw ParseError(labels_path + ": bad IDX label magic at byte 0");
    const std::uint32_t ln = detail::read_be32(lab, 4, labels_path);
    if (ln != n)
        throw ParseError(labels_path + ": " + std::to_string(ln) + " labels for " +
                         std::to_string(n) + " images");
    if (lab.size() != 8 + static_cast<std::size_t>(ln))
        throw ParseError(labels_path + ": expected " + std::to_string(8 + ln) +
                         " bytes, found " + std::to_string(lab.size()) + " (diverges at byte " +
                         std::to_string(std::min(lab.size(), std::size_t{8} + ln)) + ")");

    FactorSource src;
    src.name = std::filesystem::path(images_path).filename().string();
    src.origin = "idx-file";
    src.item_shape = Shape{static_cast<int>(h), static_cast<int>(w)};
    src.items = Tensor(Shape{static_cast<int>(n), static_cast<int>(h), static_cast<int>(w)});
    src.labels.resize(n);
    int max_label = 0;
    for (std::uint32_t i = 0; i < n; ++i) {
        src.labels[i] = static_cast<unsigned char>(lab[8 + i]);
        max_label = std::max(max_label, src.labels[i]);
    }
    src.class_count = max_label + 1;
    for (std::size_t i = 0; i < static_cast<std::size_t>(n) * h * w; ++i)
        src.items[static_cast<std::int64_t>(i)] =
            static_cast<unsigned char>(img[16 + i]) / 255.0 - 0.5;
    src.finalize();
    return src;
}

// CIFAR binary batches: records of 1 label byte + 3072 planar RGB bytes,
// converted to [32, 32, 3] interleaved.
inline FactorSource load_cifar_binary(const std::string& path) {
    const std::string bytes = detail::read_file_bytes(path);
    constexpr std::size_t record = 3073;
    if (bytes.empty() || bytes.size() % record != 0)
        throw ParseError(path + ": size " + std::to_string(bytes.size()) +
                         " is not a positive multiple of 3073 (diverges at byte " +
                         std::to_string(bytes.size() - bytes.size() % record) + ")");
    const int n = static_cast<int>(bytes.size() / record);
    FactorSource src;
    src.name = std::filesystem::path(path).filename().string();
    src.origin = "cifar-binary";
    src.item_shape = Shape{32, 32, 3};
    src.items = Tensor(Shape{n, 32, 32, 3});
    src.labels.resize(static_cast<std::size_t>(n));
    int max_label = 0;
    for (int i = 0; i < n; ++i) {
        const std::size_t base = static_cast<std::size_t>(i) * record;
        src.labels[static_cast<std::size_t>(i)] = static_cast<unsigned char>(bytes[base]);
        max_label = std::max(max_label, src.labels[static_cast<std::size_t>(i)]);
        for (int c = 0; c < 3; ++c)
            for (int p = 0; p < 1024; ++p) {
                const double v =
                    static_cast<unsigned char>(bytes[base + 1 + static_cast<std::size_t>(c) * 1024 +
                                                     static_cast<std::size_t>(p)]) /
                        255.0 -
                    0.5;
                src.items[(static_cast<std::int64_t>(i) * 1024 + p) * 3 + c] = v;
            }
    }
    src.class_count = max_label + 1;
    src.finalize();
    return src;
}

// ---------------------------------------------------------------------------
// Procedural pattern classes so the whole pipeline runs with zero downloads.
// Class appearance parameters are drawn once per class; items add per-item
// phase and noise. The family knob keeps two sources visually distinct
// (stripes vs checkers) when they feed the same merged input.

struct PatternParams {
    int kind = 0; // 0 stripes, 1 checkers
    double angle = 0.0;
    double freq = 2.0;
    double fx = 2.0, fy = 2.0;
};

namespace detail {

inline std::vector<PatternParams> pattern_classes(int c, const std::string& family, Rng& rng) {
    std::vector<PatternParams> out(static_cast<std::size_t>(c));
    for (int i = 0; i < c; ++i) {
        PatternParams& p = out[static_cast<std::size_t>(i)];
        if (family == "stripes") p.kind = 0;
        else if (family == "checkers") p.kind = 1;
        else if (family == "mixed") p.kind = i % 2;
        else throw ValidationError("unknown pattern family: " + family);
        p.angle = 3.14159265358979323846 * i / c + rng.uniform(-0.05, 0.05);
        p.freq = 1.5 + 0.45 * i + rng.uniform(-0.05, 0.05);
        p.fx = 1.0 + (i % 5) + rng.uniform(-0.05, 0.05);
        p.fy = 1.0 + (i * 2 % 7) + rng.uniform(-0.05, 0.05);
    }
    return out;
}

inline void render_pattern(const PatternParams& p, double* out, int h, int w, Rng& rng) {
    constexpr double tau = 2.0 * 3.14159265358979323846;
    const double phase1 = rng.uniform(0.0, tau);
    const double phase2 = rng.uniform(0.0, tau);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            const double x = (j + 0.5) / w, y = (i + 0.5) / h;
            double v;
            if (p.kind == 0) {
                v = 0.42 * std::sin(tau * p.freq * (x * std::cos(p.angle) + y * std::sin(p.angle)) +
                                    phase1);
            } else {
                const double s =
                    std::sin(tau * p.fx * x + phase1) * std::sin(tau * p.fy * y + phase2);
                v = s > 0.0 ? 0.42 : -0.42;
            }
            v += rng.uniform(-0.04, 0.04);
            out[i * w + j] = std::clamp(v, -0.5, 0.5);
        }
}

inline FactorSource pattern_source(const std::string& name, int c, int n_per_class,
                                   const Shape& shape,
                                   const std::vector<PatternParams>& classes, Rng& rng) {
    if (shape.size() != 2) throw ValidationError("pattern sources are [H, W], got " +
                                                 shape_to_string(shape));
    FactorSource src;
    src.name = name;
    src.origin = "synthetic-generator";
    src.item_shape = shape;
    src.class_count = c;
    const int h = shape[0], w = shape[1];
    src.items = Tensor(Shape{c * n_per_class, h, w});
    src.labels.resize(static_cast<std::size_t>(c) * n_per_class);
    std::int64_t at = 0;
    for (int cls = 0; cls < c; ++cls)
        for (int k = 0; k < n_per_class; ++k, ++at) {
            render_pattern(classes[static_cast<std::size_t>(cls)],
                           src.items.data.data() + at * h * w, h, w, rng);
            src.labels[static_cast<std::size_t>(at)] = cls;
        }
    src.finalize();
    return src;
}

} // namespace detail

inline FactorSource synth_patterns(int c, int n_per_class, const Shape& shape, Rng& rng) {
    if (c < 1 || n_per_class < 1) throw ValidationError("synth_patterns needs c, n >= 1");
    auto classes = detail::pattern_classes(c, "mixed", rng);
    return detail::pattern_source("synth-mixed", c, n_per_class, shape, classes, rng);
}

// Train and test pools that share class appearance parameters, mirroring a
// dataset's own train/test portions.
inline std::pair<FactorSource, FactorSource> synth_pattern_split(int c, int n_train_per_class,
                                                                 int n_test_per_class,
                                                                 const Shape& shape,
                                                                 const std::string& family,
                                                                 std::uint64_t seed) {
    Rng class_rng(derive_seed(seed, 0x50415241)); // class parameter stream
    auto classes = detail::pattern_classes(c, family, class_rng);
    Rng train_rng(derive_seed(seed, 0x50545230));
    Rng test_rng(derive_seed(seed, 0x50545231));
    auto train = detail::pattern_source("synth-" + family + "-train", c, n_train_per_class,
                                        shape, classes, train_rng);
    auto test = detail::pattern_source("synth-" + family + "-test", c, n_test_per_class, shape,
                                       classes, test_rng);
    return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------
// Source adapters for mixed-geometry runs.

// [H, W] or [H, W, 1] items replicated to [H, W, channels].
inline FactorSource broadcast_channels(const FactorSource& src, int channels) {
    if (channels < 1) throw ValidationError("channels must be >= 1");
    Shape in = src.item_shape;
    int have = 1;
    if (in.size() == 3) {
        have = in[2];
        in.pop_back();
    } else if (in.size() != 2) {
        throw DimensionError("broadcast_channels expects [H, W] or [H, W, C] items, got " +
                             shape_to_string(src.item_shape));
    }
    if (have != 1) throw ValidationError("broadcast_channels needs single-channel items");
    FactorSource out = src;
    out.item_shape = Shape{in[0], in[1], channels};
    out.items = Tensor(Shape{src.size(), in[0], in[1], channels});
    const std::int64_t pixels = static_cast<std::int64_t>(src.size()) * in[0] * in[1];
    for (std::int64_t p = 0; p < pixels; ++p)
        for (int ch = 0; ch < channels; ++ch) out.items[p * channels + ch] = src.items[p];
    out.finalize();
    return out;
}

inline FactorSource resize_nearest(const FactorSource& src, int new_h, int new_w) {
    if (new_h < 1 || new_w < 1) throw ValidationError("resize target must be >= 1");
    if (src.item_shape.size() < 2)
        throw DimensionError("resize_nearest expects [H, W, ...] items, got " +
                             shape_to_string(src.item_shape));
    const int h = src.item_shape[0], w = src.item_shape[1];
    const int ch = src.item_shape.size() == 3 ? src.item_shape[2] : 1;
    FactorSource out = src;
    out.item_shape = src.item_shape;
    out.item_shape[0] = new_h;
    out.item_shape[1] = new_w;
    Shape full{src.size()};
    for (int d : out.item_shape) full.push_back(d);
    out.items = Tensor(full);
    for (int i = 0; i < src.size(); ++i)
        for (int r = 0; r < new_h; ++r)
            for (int c2 = 0; c2 < new_w; ++c2) {
                const int sr = r * h / new_h, sc = c2 * w / new_w;
                for (int k = 0; k < ch; ++k)
                    out.items[((static_cast<std::int64_t>(i) * new_h + r) * new_w + c2) * ch + k] =
                        src.items[((static_cast<std::int64_t>(i) * h + sr) * w + sc) * ch + k];
            }
    out.finalize();
    return out;
}

} // namespace sgl
