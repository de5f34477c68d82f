#pragma once

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sgl/config.hpp"
#include "sgl/data.hpp"
#include "sgl/error.hpp"
#include "sgl/gradcheck.hpp"
#include "sgl/metrics.hpp"
#include "sgl/model.hpp"
#include "sgl/train.hpp"
#include "sgl/version.hpp"
#include "sgl/viz.hpp"

namespace sgl {

// Tags for the independent deterministic streams derived from a cell's seed.
inline constexpr std::uint64_t kTagData = 0x64617461;
inline constexpr std::uint64_t kTagInit = 0x696e6974;
inline constexpr std::uint64_t kTagTrain = 0x7472616e;
inline constexpr std::uint64_t kTagProbe = 0x70726f62;

inline std::string fmt_g(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

inline std::string hex64(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

// Error text destined for a CSV cell: one line, no separators.
inline std::string one_line(std::string s) {
    for (char& c : s)
        if (c == ',' || c == '\n' || c == '\r') c = ';';
    return s;
}

inline void write_text_file(const std::string& path, const std::string& text) {
    const std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << text;
    out.flush();
    if (!out) throw IoError("failed writing: " + path);
}

struct SourcePools {
    FactorSource train;
    FactorSource test;
};

namespace detail {

inline FactorSource adapt_source(FactorSource src, const SourceConfig& sc) {
    if (!sc.resize.empty()) {
        if (sc.resize.size() != 2)
            throw ValidationError("source resize must be [h, w], got " +
                                  shape_to_string(sc.resize));
        src = resize_nearest(src, sc.resize[0], sc.resize[1]);
    }
    if (sc.channels > 0) src = broadcast_channels(src, sc.channels);
    if (!sc.name.empty()) src.name = sc.name;
    return src;
}

} // namespace detail

// Materializes one configured source's train and test pools. File-backed
// pools ignore the seed; synthesized pools draw fresh items from it.
inline SourcePools build_source(const SourceConfig& sc, std::uint64_t data_seed, int index) {
    SourcePools pools;
    if (sc.kind == "pattern") {
        if (sc.shape.size() != 2)
            throw ValidationError("pattern source needs shape [H, W], got " +
                                  shape_to_string(sc.shape));
        if (sc.n_train_per_class < 1 || sc.n_test_per_class < 1)
            throw ValidationError("pattern source needs per-class train and test counts");
        auto [train, test] =
            synth_pattern_split(sc.classes, sc.n_train_per_class, sc.n_test_per_class, sc.shape,
                                sc.family, derive_seed(data_seed, 0x737263 + index));
        pools.train = std::move(train);
        pools.test = std::move(test);
    } else if (sc.kind == "idx") {
        pools.train = load_idx(sc.train_images, sc.train_labels);
        pools.test = load_idx(sc.test_images, sc.test_labels);
    } else if (sc.kind == "cifar") {
        pools.train = load_cifar_binary(sc.train_path);
        pools.test = load_cifar_binary(sc.test_path);
    } else {
        throw ValidationError("unknown source kind: " + sc.kind);
    }
    pools.train = detail::adapt_source(std::move(pools.train), sc);
    pools.test = detail::adapt_source(std::move(pools.test), sc);
    if (!sc.name.empty()) {
        pools.train.name = sc.name + "-train";
        pools.test.name = sc.name + "-test";
    }
    return pools;
}

struct BuiltData {
    PairDataset train;
    PairDataset test;
    LabelSplit split;
    nlohmann::json source_sums = nlohmann::json::array();
};

// Deterministic per-seed dataset assembly shared by the paired experiments.
inline BuiltData build_pair_data(const ExperimentConfig& cfg, std::uint64_t seed) {
    const std::uint64_t data_seed = derive_seed(seed, kTagData);
    BuiltData out;
    if (cfg.data.sources.size() != 2)
        throw ValidationError("paired experiments need exactly two sources");
    SourcePools a = build_source(cfg.data.sources[0], data_seed, 0);
    SourcePools b = build_source(cfg.data.sources[1], data_seed, 1);
    out.split = make_label_split(scheme_from_name(cfg.data.scheme), a.train.class_count,
                                 b.train.class_count);
    const MergeMode merge = merge_mode_from_name(cfg.data.merge);
    Rng rng(derive_seed(data_seed, 0x70616972));
    out.train = sample_pair(out.split, a.train, b.train, merge, Role::Train, cfg.data.n_train,
                            rng);
    out.test = sample_pair(out.split, a.test, b.test, merge, Role::Test, cfg.data.n_test, rng);
    for (const SourcePools* p : {&a, &b})
        out.source_sums.push_back({{"name", p->train.name},
                                   {"train_checksum", hex64(p->train.checksum)},
                                   {"test_checksum", hex64(p->test.checksum)}});
    return out;
}

inline BuiltData build_single_data(const ExperimentConfig& cfg, std::uint64_t seed) {
    const std::uint64_t data_seed = derive_seed(seed, kTagData);
    BuiltData out;
    SourcePools pool = build_source(cfg.data.sources.at(0), data_seed, 0);
    out.split = make_label_split(Scheme::NewClasses, pool.train.class_count, 0);
    Rng rng(derive_seed(data_seed, 0x736f6c6f));
    out.train = sample_single(out.split, pool.train, Role::Train, cfg.data.n_train, rng);
    out.test = sample_single(out.split, pool.test, Role::Test, cfg.data.n_test, rng);
    out.source_sums.push_back({{"name", pool.train.name},
                               {"train_checksum", hex64(pool.train.checksum)},
                               {"test_checksum", hex64(pool.test.checksum)}});
    return out;
}

struct CellResult {
    std::string variant;
    int depth = 0;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    std::string stop_reason;
    int iterations = 0;
    double loss = 0.0;
    double train_acc = 0.0;
    MetricsRecord metrics;
    RunHistory history;
    nlohmann::json source_sums = nlohmann::json::array();
};

inline std::vector<int> effective_depths(const ExperimentConfig& cfg) {
    std::vector<int> depths = cfg.depths;
    if (depths.empty()) {
        if (cfg.kind == "sweep")
            for (int d = 0; d <= cfg.model.total_depth; ++d) depths.push_back(d);
        else
            depths = {0, cfg.model.total_depth};
    }
    std::sort(depths.begin(), depths.end());
    depths.erase(std::unique(depths.begin(), depths.end()), depths.end());
    return depths;
}

inline std::string variant_label(int depth, int total_depth) {
    if (depth == 0) return "individual";
    if (depth == total_depth) return "shared";
    return "s" + std::to_string(depth);
}

// Trains one (depth, seed) cell and evaluates the full metric set. Failures
// are captured in the result, never thrown.
inline CellResult run_cell(const ExperimentConfig& cfg, int depth, std::uint64_t seed,
                           bool snapshot_metrics) {
    CellResult r;
    r.depth = depth;
    r.seed = seed;
    r.variant = variant_label(depth, cfg.model.total_depth);
    try {
        BuiltData data = cfg.kind == "newclass" ? build_single_data(cfg, seed)
                                                : build_pair_data(cfg, seed);
        r.source_sums = data.source_sums;
        SplitModelSpec spec = to_model_spec(cfg.model, depth);
        SplitModel model = build_split_model(spec, derive_seed(seed, kTagInit));
        TrainConfig tc = cfg.train;
        tc.seed = derive_seed(seed, kTagTrain);

        Shape probe_shape{cfg.data.n_random};
        for (std::size_t i = 1; i < data.train.inputs.shape.size(); ++i)
            probe_shape.push_back(data.train.inputs.shape[i]);
        Rng probe_rng(derive_seed(seed, kTagProbe));
        const Tensor probes = random_input(probe_shape, probe_rng);
        const int min_count = default_min_count(cfg.data.n_random);

        PredictFn pred = [&model](const Tensor& batch) { return model.predict(batch); };
        MetricHook hook;
        if (snapshot_metrics)
            hook = [&](SplitModel&) {
                MetricsRecord m;
                const OodReport ood =
                    ood_partition_report(pred, probes, data.split.test_combos, min_count);
                m.ood_partition_count = ood.partition_count;
                m.ood_sample_ratio = ood.sample_ratio;
                m.n_eval = cfg.data.n_random;
                m.has_values = true;
                return m;
            };

        RunHistory hist = train(model, data.train, tc, hook);
        r.stop_reason = hist.stop_reason;
        r.iterations = hist.final_iteration;
        r.loss = hist.final_snapshot().loss;
        r.train_acc = hist.final_snapshot().train_acc;

        MetricsRecord m;
        m.test_sample_acc = test_sample_accuracy(pred, data.test.inputs, data.test.labels);
        m.test_set_acc = test_set_accuracy(pred, data.test.inputs, data.split.test_combos);
        Rng sampler_rng(derive_seed(seed, kTagProbe)); // replays the probe stream
        Shape item_shape(probe_shape.begin() + 1, probe_shape.end());
        InputSampler sampler = [&sampler_rng, item_shape](int n) {
            Shape s{n};
            for (int d : item_shape) s.push_back(d);
            return random_input(s, sampler_rng);
        };
        m.random_set_acc =
            random_set_accuracy(pred, sampler, data.split.test_combos, cfg.data.n_random);
        const OodReport ood = ood_partition_report(pred, probes, data.split.test_combos,
                                                   min_count);
        m.ood_partition_count = ood.partition_count;
        m.ood_sample_ratio = ood.sample_ratio;
        m.n_eval = cfg.data.n_random;
        m.has_values = true;
        m.check();
        r.metrics = m;
        r.history = std::move(hist);
        r.ok = true;
    } catch (const std::exception& e) {
        r.ok = false;
        r.error = one_line(e.what());
    }
    return r;
}

inline void parallel_cells(int n, int threads, const std::function<void(int)>& work) {
    if (threads <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) work(i);
        return;
    }
    std::atomic<int> next{0};
    const auto worker = [&] {
        for (int i; (i = next.fetch_add(1)) < n;) work(i);
    };
    std::vector<std::thread> pool;
    const int count = std::min(threads, n);
    pool.reserve(static_cast<std::size_t>(count));
    for (int t = 0; t < count; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
}

// Runs every (depth, seed) cell of an experiment; rows come back sorted.
inline std::vector<CellResult> run_cells(const ExperimentConfig& cfg, int threads,
                                         bool snapshot_metrics, std::ostream& log) {
    const std::vector<int> depths = effective_depths(cfg);
    struct Job {
        int depth;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    for (int d : depths)
        for (std::uint64_t s : cfg.seeds) jobs.push_back({d, s});
    std::vector<CellResult> cells(jobs.size());
    std::mutex log_mutex;
    parallel_cells(static_cast<int>(jobs.size()), threads, [&](int i) {
        const Job& job = jobs[static_cast<std::size_t>(i)];
        CellResult r = run_cell(cfg, job.depth, job.seed, snapshot_metrics);
        {
            std::lock_guard<std::mutex> lock(log_mutex);
            log << "  depth=" << job.depth << " seed=" << job.seed;
            if (r.ok)
                log << " train_acc=" << fmt_g(r.train_acc)
                    << " test_sample=" << fmt_g(r.metrics.test_sample_acc)
                    << " test_set=" << fmt_g(r.metrics.test_set_acc)
                    << " random_set=" << fmt_g(r.metrics.random_set_acc) << "\n";
            else
                log << " FAILED: " << r.error << "\n";
            log.flush();
        }
        cells[static_cast<std::size_t>(i)] = std::move(r);
    });
    return cells;
}

inline nlohmann::json make_manifest(const ExperimentConfig& cfg,
                                    const std::vector<CellResult>& cells) {
    nlohmann::json m;
    m["version"] = kVersion;
    m["recipe"] = cfg.name;
    m["kind"] = cfg.kind;
    m["scale"] = cfg.scale;
    m["config"] = cfg.resolved;
    m["seeds"] = cfg.seeds;
    m["depths"] = effective_depths(cfg);
    // one source-checksum block per seed; identical across depths
    nlohmann::json sums = nlohmann::json::object();
    for (const CellResult& c : cells) {
        const std::string key = "seed-" + std::to_string(c.seed);
        if (!sums.contains(key) && !c.source_sums.empty()) sums[key] = c.source_sums;
    }
    m["sources"] = sums;
    return m;
}

struct RunOutcome {
    bool any_failed = false;
    std::vector<CellResult> cells;
};

// Figure-4 style depth sweep: per-cell CSV, per-depth summary, trend file.
inline RunOutcome run_sweep(const ExperimentConfig& cfg, int threads, std::ostream& log) {
    log << "sweep " << cfg.name << " (" << cfg.scale << ")\n";
    RunOutcome out;
    out.cells = run_cells(cfg, threads, /*snapshot_metrics=*/false, log);

    std::ostringstream csv;
    csv << "depth,seed,iterations,stop_reason,loss,train_acc,test_sample_acc,test_set_acc,"
           "random_set_acc,ood_partitions,ood_ratio,status\n";
    for (const CellResult& c : out.cells) {
        csv << c.depth << ',' << c.seed << ',';
        if (c.ok)
            csv << c.iterations << ',' << c.stop_reason << ',' << fmt_g(c.loss) << ','
                << fmt_g(c.train_acc) << ',' << fmt_g(c.metrics.test_sample_acc) << ','
                << fmt_g(c.metrics.test_set_acc) << ',' << fmt_g(c.metrics.random_set_acc) << ','
                << c.metrics.ood_partition_count << ',' << fmt_g(c.metrics.ood_sample_ratio)
                << ",ok\n";
        else
            csv << ",,,,,,,,failed: " << c.error << "\n";
        out.any_failed |= !c.ok;
    }

    // per-depth means, ascending depth: individual end first, shared end last
    const std::vector<int> depths = effective_depths(cfg);
    std::ostringstream summary;
    summary << "depth,cells,test_sample_mean,test_sample_std,test_set_mean,test_set_std,"
               "random_set_mean,random_set_std,train_acc_mean\n";
    std::vector<double> xs;
    std::vector<double> mean_sample, mean_set, mean_random;
    for (int d : depths) {
        std::vector<double> vs, vt, vr, va;
        for (const CellResult& c : out.cells)
            if (c.ok && c.depth == d) {
                vs.push_back(c.metrics.test_sample_acc);
                vt.push_back(c.metrics.test_set_acc);
                vr.push_back(c.metrics.random_set_acc);
                va.push_back(c.train_acc);
            }
        summary << d << ',' << vs.size();
        if (vs.empty()) {
            summary << ",,,,,,,\n";
            continue;
        }
        const auto [ms, ss] = mean_std(vs);
        const auto [mt, st] = mean_std(vt);
        const auto [mr, sr] = mean_std(vr);
        summary << ',' << fmt_g(ms) << ',' << fmt_g(ss) << ',' << fmt_g(mt) << ',' << fmt_g(st)
                << ',' << fmt_g(mr) << ',' << fmt_g(sr) << ','
                << fmt_g(mean_std(va).first) << "\n";
        xs.push_back(d);
        mean_sample.push_back(ms);
        mean_set.push_back(mt);
        mean_random.push_back(mr);
    }

    std::ostringstream trend;
    trend << "metric,spearman_depth_vs_mean\n";
    if (xs.size() >= 2) {
        trend << "test_sample_acc," << fmt_g(spearman(xs, mean_sample)) << "\n";
        trend << "test_set_acc," << fmt_g(spearman(xs, mean_set)) << "\n";
        trend << "random_set_acc," << fmt_g(spearman(xs, mean_random)) << "\n";
    }

    write_text_file(cfg.out_dir + "/sweep.csv", csv.str());
    write_text_file(cfg.out_dir + "/summary.csv", summary.str());
    write_text_file(cfg.out_dir + "/trend.csv", trend.str());
    write_text_file(cfg.out_dir + "/manifest.json", make_manifest(cfg, out.cells).dump(2) + "\n");
    return out;
}

// Appendix D.1: o.o.d. partition counts along training, shared vs individual.
inline RunOutcome run_partition_track(const ExperimentConfig& cfg, int threads,
                                      std::ostream& log) {
    log << "partition-track " << cfg.name << " (" << cfg.scale << ")\n";
    RunOutcome out;
    out.cells = run_cells(cfg, threads, /*snapshot_metrics=*/true, log);

    std::ostringstream csv;
    csv << "variant,seed,iteration,ood_partitions,ood_ratio\n";
    std::ostringstream failures;
    failures << "variant,seed,error\n";
    for (const CellResult& c : out.cells) {
        if (!c.ok) {
            out.any_failed = true;
            failures << c.variant << ',' << c.seed << ',' << c.error << "\n";
            continue;
        }
        for (const Snapshot& s : c.history.snapshots)
            csv << c.variant << ',' << c.seed << ',' << s.iteration << ','
                << s.metrics.ood_partition_count << ',' << fmt_g(s.metrics.ood_sample_ratio)
                << "\n";
    }
    write_text_file(cfg.out_dir + "/track.csv", csv.str());
    if (out.any_failed) write_text_file(cfg.out_dir + "/failures.csv", failures.str());
    write_text_file(cfg.out_dir + "/manifest.json", make_manifest(cfg, out.cells).dump(2) + "\n");
    return out;
}

// Appendix D.2: binary heads, no biases, first half of the classes trained.
inline RunOutcome run_newclass(const ExperimentConfig& cfg, int threads, std::ostream& log) {
    log << "newclass " << cfg.name << " (" << cfg.scale << ")\n";
    RunOutcome out;
    out.cells = run_cells(cfg, threads, /*snapshot_metrics=*/false, log);

    std::ostringstream csv;
    csv << "variant,seed,depth,iterations,loss,train_acc,test_sample_acc,test_set_acc,"
           "random_set_acc,status\n";
    for (const CellResult& c : out.cells) {
        csv << c.variant << ',' << c.seed << ',' << c.depth << ',';
        if (c.ok)
            csv << c.iterations << ',' << fmt_g(c.loss) << ',' << fmt_g(c.train_acc) << ','
                << fmt_g(c.metrics.test_sample_acc) << ',' << fmt_g(c.metrics.test_set_acc) << ','
                << fmt_g(c.metrics.random_set_acc) << ",ok\n";
        else
            csv << ",,,,,,failed: " << c.error << "\n";
        out.any_failed |= !c.ok;
    }

    std::ostringstream summary;
    summary << "variant,cells,test_sample_mean,test_set_mean,random_set_mean,random_set_std\n";
    for (const int d : effective_depths(cfg)) {
        std::vector<double> vs, vt, vr;
        for (const CellResult& c : out.cells)
            if (c.ok && c.depth == d) {
                vs.push_back(c.metrics.test_sample_acc);
                vt.push_back(c.metrics.test_set_acc);
                vr.push_back(c.metrics.random_set_acc);
            }
        if (vs.empty()) continue;
        const auto [mr, sr] = mean_std(vr);
        summary << variant_label(d, cfg.model.total_depth) << ',' << vs.size() << ','
                << fmt_g(mean_std(vs).first) << ',' << fmt_g(mean_std(vt).first) << ','
                << fmt_g(mr) << ',' << fmt_g(sr) << "\n";
    }

    write_text_file(cfg.out_dir + "/newclass.csv", csv.str());
    write_text_file(cfg.out_dir + "/summary.csv", summary.str());
    write_text_file(cfg.out_dir + "/manifest.json", make_manifest(cfg, out.cells).dump(2) + "\n");
    return out;
}

struct VizRow {
    std::string case_name;
    std::string variant;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    int total_depth = 0;
    int shared_depth = 0;
    int iterations = 0;
    std::string stop_reason;
    double train_acc = 0.0;
    double blue_fraction = 0.0;
};

// Figure 2 / Appendix D.5 panels: per case, variant, and seed.
inline RunOutcome run_viz2d(const ExperimentConfig& cfg, int threads, std::ostream& log) {
    log << "viz2d " << cfg.name << " (" << cfg.scale << ")\n";
    RunOutcome out;
    struct Job {
        std::string case_name;
        VizVariant variant;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    for (const std::string& case_name : cfg.viz.cases)
        for (const VizVariant& v : cfg.viz.variants)
            for (std::uint64_t s : cfg.seeds) jobs.push_back({case_name, v, s});
    std::vector<VizRow> rows(jobs.size());
    nlohmann::json sums = nlohmann::json::object();
    std::mutex mx;

    parallel_cells(static_cast<int>(jobs.size()), threads, [&](int i) {
        const Job& job = jobs[static_cast<std::size_t>(i)];
        VizRow row;
        row.case_name = job.case_name;
        row.variant = job.variant.name;
        row.seed = job.seed;
        row.total_depth = job.variant.total_depth;
        row.shared_depth = job.variant.shared_depth;
        try {
            Rng data_rng(derive_seed(job.seed, kTagData));
            PairDataset data = synth2d(job.case_name, cfg.data.n_train, data_rng);

            ModelConfig mc = cfg.model;
            mc.total_depth = job.variant.total_depth;
            SplitModelSpec spec = to_model_spec(mc, job.variant.shared_depth);
            SplitModel model = build_split_model(spec, derive_seed(job.seed, kTagInit));

            TrainConfig tc = cfg.train;
            tc.seed = derive_seed(job.seed, kTagTrain);
            if (job.case_name == "blobs-d") { // Figure 2d: one training step
                tc.iterations = 1;
                tc.plateau_window = 0;
            }
            RunHistory hist = train(model, data, tc);
            row.iterations = hist.final_iteration;
            row.stop_reason = hist.stop_reason;
            row.train_acc = hist.final_snapshot().train_acc;

            PredictFn pred = [&model](const Tensor& b) { return model.predict(b); };
            const Bounds bounds = padded_bounds(data.inputs);
            LabelRaster raster =
                rasterize(pred, bounds, cfg.viz.resolution, cfg.viz.resolution);
            const LabelTuple combo = synth2d_new_combo();
            row.blue_fraction = blue_area_fraction(raster, combo);

            ColorRaster out1 = factor_panel(raster, 0);
            ColorRaster out2 = factor_panel(raster, 1);
            ColorRaster res = result_panel(raster, combo);
            for (int p = 0; p < data.size(); ++p) {
                const double x = data.inputs[2 * p], y = data.inputs[2 * p + 1];
                const LabelTuple& t = data.labels[static_cast<std::size_t>(p)];
                stamp_dot(out1, bounds, x, y,
                          darken(kFactorPalette[static_cast<std::size_t>(t[0]) % 10]));
                stamp_dot(out2, bounds, x, y,
                          darken(kFactorPalette[static_cast<std::size_t>(t[1]) % 10]));
                stamp_dot(res, bounds, x, y, Rgb{0, 0, 0});
            }
            const std::string stem =
                job.case_name + "-" + job.variant.name + "-s" + std::to_string(job.seed);
            const PanelPaths paths = panel_paths(cfg.out_dir, stem);
            std::filesystem::create_directories(cfg.out_dir);
            write_ppm(out1, paths.out1);
            write_ppm(out2, paths.out2);
            write_ppm(res, paths.result);
            row.ok = true;

            std::lock_guard<std::mutex> lock(mx);
            const std::string key = job.case_name + "-s" + std::to_string(job.seed);
            if (!sums.contains(key))
                sums[key] = {{"checksum", hex64(tensor_checksum(data.inputs))}};
        } catch (const std::exception& e) {
            row.ok = false;
            row.error = one_line(e.what());
        }
        {
            std::lock_guard<std::mutex> lock(mx);
            log << "  " << row.case_name << " " << row.variant << " seed=" << row.seed;
            if (row.ok)
                log << " train_acc=" << fmt_g(row.train_acc)
                    << " blue=" << fmt_g(row.blue_fraction) << "\n";
            else
                log << " FAILED: " << row.error << "\n";
            log.flush();
        }
        rows[static_cast<std::size_t>(i)] = std::move(row);
    });

    std::ostringstream csv;
    csv << "case,variant,seed,total_depth,shared_depth,iterations,stop_reason,train_acc,"
           "blue_fraction,status\n";
    for (const VizRow& r : rows) {
        csv << r.case_name << ',' << r.variant << ',' << r.seed << ',' << r.total_depth << ','
            << r.shared_depth << ',';
        if (r.ok)
            csv << r.iterations << ',' << r.stop_reason << ',' << fmt_g(r.train_acc) << ','
                << fmt_g(r.blue_fraction) << ",ok\n";
        else
            csv << ",,,,failed: " << r.error << "\n";
        out.any_failed |= !r.ok;
    }

    nlohmann::json manifest;
    manifest["version"] = kVersion;
    manifest["recipe"] = cfg.name;
    manifest["kind"] = cfg.kind;
    manifest["scale"] = cfg.scale;
    manifest["config"] = cfg.resolved;
    manifest["seeds"] = cfg.seeds;
    manifest["sources"] = sums;
    write_text_file(cfg.out_dir + "/fractions.csv", csv.str());
    write_text_file(cfg.out_dir + "/manifest.json", manifest.dump(2) + "\n");
    return out;
}

// Finite-difference audit of a configured model on a synthetic batch.
inline RunOutcome run_gradcheck(const ExperimentConfig& cfg, std::ostream& log) {
    log << "gradcheck " << cfg.name << "\n";
    RunOutcome out;
    const std::vector<int> depths = effective_depths(cfg);
    std::ostringstream report;
    for (int depth : depths) {
        for (std::uint64_t seed : cfg.seeds) {
            SplitModelSpec spec = to_model_spec(cfg.model, depth);
            SplitModel model = build_split_model(spec, derive_seed(seed, kTagInit));
            Rng rng(derive_seed(seed, kTagProbe));
            const int batch = 3;
            Shape shape{batch};
            for (int d : spec.input_shape) shape.push_back(d);
            Tensor inputs = random_input(shape, rng);
            std::vector<LabelTuple> labels;
            for (int i = 0; i < batch; ++i) {
                LabelTuple t;
                if (spec.head_mode == HeadMode::Binary)
                    t = {rng.uniform_int(spec.factor_count)};
                else
                    for (int c : spec.classes_per_factor) t.push_back(rng.uniform_int(c));
                labels.push_back(std::move(t));
            }
            model.set_minibatch(inputs, labels);
            perturb_params(model.graph, model.total_loss_id, derive_seed(seed, kTagProbe) ^ 1);
            model.graph.forward();
            const FdReport fd = finite_difference_check(model.graph, model.total_loss_id);
            report << "depth=" << depth << " seed=" << seed
                   << " max_rel_error=" << fmt_g(fd.max_rel_error)
                   << " tolerance=" << fmt_g(fd.tolerance)
                   << (fd.passed ? " PASS" : " FAIL") << "\n";
            out.any_failed |= !fd.passed;
        }
    }
    log << report.str();
    write_text_file(cfg.out_dir + "/gradcheck.txt", report.str());
    return out;
}

// Single training run: history CSV plus a reloadable checkpoint.
inline RunOutcome run_train_once(const ExperimentConfig& cfg, std::ostream& log) {
    log << "train-once " << cfg.name << " (" << cfg.scale << ")\n";
    RunOutcome out;
    const int depth = effective_depths(cfg).front();
    const std::uint64_t seed = cfg.seeds.front();
    CellResult cell;
    cell.depth = depth;
    cell.seed = seed;
    cell.variant = variant_label(depth, cfg.model.total_depth);
    try {
        PairDataset data;
        if (cfg.model.family == "mlp2d") {
            Rng data_rng(derive_seed(seed, kTagData));
            data = synth2d(cfg.data.synth2d_case.empty() ? "blobs-a" : cfg.data.synth2d_case,
                           cfg.data.n_train, data_rng);
        } else {
            BuiltData built = cfg.kind == "newclass" ? build_single_data(cfg, seed)
                                                     : build_pair_data(cfg, seed);
            cell.source_sums = built.source_sums;
            data = std::move(built.train);
        }
        SplitModel model =
            build_split_model(to_model_spec(cfg.model, depth), derive_seed(seed, kTagInit));
        TrainConfig tc = cfg.train;
        tc.seed = derive_seed(seed, kTagTrain);
        cell.history = train(model, data, tc);
        cell.ok = true;
        std::filesystem::create_directories(cfg.out_dir);
        save_checkpoint(model, cfg.out_dir + "/model.sgl");
        log << "  train_acc=" << fmt_g(cell.history.final_snapshot().train_acc)
            << " loss=" << fmt_g(cell.history.final_snapshot().loss) << "\n";
    } catch (const std::exception& e) {
        cell.error = one_line(e.what());
    }
    out.any_failed = !cell.ok;
    std::ostringstream hist_csv;
    if (cell.ok) write_history_csv(hist_csv, cell.history);
    write_text_file(cfg.out_dir + "/history.csv", hist_csv.str());
    std::vector<CellResult> cells{cell};
    write_text_file(cfg.out_dir + "/manifest.json", make_manifest(cfg, cells).dump(2) + "\n");
    if (!cell.ok) log << "  FAILED: " << cell.error << "\n";
    return out;
}

// Dispatch by config kind; returns the process exit code contract (0 or 3).
inline int run_experiment(const ExperimentConfig& cfg, int threads, std::ostream& log) {
    validate_config(cfg);
    RunOutcome out;
    if (cfg.kind == "sweep") out = run_sweep(cfg, threads, log);
    else if (cfg.kind == "viz2d") out = run_viz2d(cfg, threads, log);
    else if (cfg.kind == "partition-track") out = run_partition_track(cfg, threads, log);
    else if (cfg.kind == "newclass") out = run_newclass(cfg, threads, log);
    else if (cfg.kind == "gradcheck") out = run_gradcheck(cfg, log);
    else out = run_train_once(cfg, log);
    return out.any_failed ? 3 : 0;
}

} // namespace sgl
