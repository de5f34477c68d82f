#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <numeric>

#include "sgl/gradcheck.hpp"
#include "sgl/model.hpp"
#include "sgl/rng.hpp"

using namespace sgl;

namespace {

SplitModelSpec mlp_spec(int L, int s, int W, int K = 2, int classes = 10) {
    SplitModelSpec spec;
    spec.family = Family::Mlp;
    spec.total_depth = L;
    spec.shared_depth = s;
    spec.trunk_width = W;
    spec.factor_count = K;
    spec.classes_per_factor.assign(static_cast<std::size_t>(K), classes);
    spec.input_shape = Shape{8, 8};
    return spec;
}

Tensor random_batch(const SplitModelSpec& spec, int n, std::uint64_t seed) {
    Shape s;
    s.push_back(n);
    for (int d : spec.input_shape) s.push_back(d);
    Tensor t(s);
    Rng rng(seed);
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-0.5, 0.5);
    return t;
}

} // namespace

TEST_CASE("spec validation rejects bad configurations", "[model]") {
    CHECK_THROWS_AS(mlp_spec(0, 0, 8).validate(), ValidationError);
    CHECK_THROWS_AS(mlp_spec(3, 4, 8).validate(), ValidationError);
    auto spec = mlp_spec(3, 1, 8);
    spec.classes_per_factor.push_back(4);
    CHECK_THROWS_AS(spec.validate(), ValidationError);
    auto binary = mlp_spec(3, 1, 8, 2, 10);
    binary.head_mode = HeadMode::Binary;
    CHECK_THROWS_AS(binary.validate(), ValidationError);
    auto cnn = mlp_spec(3, 1, 8);
    cnn.family = Family::Cnn;
    CHECK_THROWS_AS(cnn.validate(), ValidationError); // input_shape not [H,W,C]
}

TEST_CASE("split widths preserve summed node count per layer", "[model]") {
    for (int s = 0; s <= 7; ++s) {
        auto m = build_split_model(mlp_spec(7, s, 512), 1);
        REQUIRE(m.hidden_layer_totals.size() == 7);
        for (int total : m.hidden_layer_totals) CHECK(total == 512);
    }
}

TEST_CASE("fully split and fully shared extremes have expected shapes", "[model]") {
    auto split = build_split_model(mlp_spec(7, 0, 512), 3);
    CHECK(split.trunk_params.empty());
    CHECK(split.head_params[0].size() == 16); // 7 hidden + output, w and b each
    auto shared = build_split_model(mlp_spec(7, 7, 512), 3);
    CHECK(shared.trunk_params.size() == 14);
    CHECK(shared.head_params[0].size() == 2); // bare linear output
    CHECK(shared.head_params[1].size() == 2);

    // K=1 degenerates to a single unsplit net for any s.
    auto single0 = build_split_model(mlp_spec(5, 0, 64, 1), 4);
    auto single5 = build_split_model(mlp_spec(5, 5, 64, 1), 4);
    CHECK(single0.param_count() == single5.param_count());
}

TEST_CASE("forward emits one logit tensor per factor", "[model]") {
    auto m = build_split_model(mlp_spec(3, 1, 16), 7);
    auto logits = m.forward(random_batch(m.spec, 1, 9));
    REQUIRE(logits.size() == 2);
    CHECK(logits[0].shape == Shape{1, 10});
    CHECK(logits[1].shape == Shape{1, 10});
    CHECK_THROWS_AS(m.forward(Tensor(Shape{1, 8, 7})), DimensionError);
}

TEST_CASE("zero input through zero-init no-bias model gives zero logits", "[model]") {
    auto spec = mlp_spec(3, 1, 16);
    spec.use_bias = false;
    auto m = build_split_model(spec, 11);
    for (int pid : m.param_registry) {
        Tensor& t = m.graph.param_value(pid);
        std::fill(t.data.begin(), t.data.end(), 0.0);
    }
    Shape bs{2};
    for (int d : spec.input_shape) bs.push_back(d);
    auto logits = m.forward(Tensor(bs, 0.0));
    for (const Tensor& lg : logits)
        for (double v : lg.data) CHECK(v == 0.0);
}

TEST_CASE("s=0 heads are disjoint in forward and gradient", "[model]") {
    auto m = build_split_model(mlp_spec(4, 0, 32), 13);
    Tensor batch = random_batch(m.spec, 3, 17);
    auto before = m.forward(batch);

    // Perturb every head-2 parameter; head-1 logits must not move a bit.
    for (int pid : m.head_params[1]) {
        Tensor& t = m.graph.param_value(pid);
        for (double& v : t.data) v += 0.37;
    }
    auto after = m.forward(batch);
    CHECK(after[0].data == before[0].data);
    CHECK(after[1].data != before[1].data);

    // Gradient of factor-0 loss alone is identically zero on head 1.
    std::vector<LabelTuple> labels = {{1, 2}, {3, 4}, {5, 6}};
    m.set_minibatch(batch, labels);
    m.graph.forward_to(m.loss_ids[0]);
    m.graph.backward(m.loss_ids[0]);
    for (int pid : m.head_params[1])
        for (double v : m.graph.grad(pid).data) CHECK(v == 0.0);
}

TEST_CASE("same spec and seed give bit-identical parameters", "[model]") {
    auto a = build_split_model(mlp_spec(5, 2, 64), 99);
    auto b = build_split_model(mlp_spec(5, 2, 64), 99);
    auto c = build_split_model(mlp_spec(5, 2, 64), 100);
    REQUIRE(a.param_registry == b.param_registry);
    bool any_diff_c = false;
    for (std::size_t i = 0; i < a.param_registry.size(); ++i) {
        const int pid = a.param_registry[i];
        CHECK(a.graph.value(pid).data == b.graph.value(pid).data);
        if (a.graph.value(pid).data != c.graph.value(pid).data) any_diff_c = true;
    }
    CHECK(any_diff_c);
}

TEST_CASE("predict takes argmax per factor with lowest-index ties", "[model]") {
    // Hand-built single-layer model: force logits through zeroed weights plus
    // biases so values are exact.
    SplitModelSpec spec = mlp_spec(1, 1, 4, 2, 2);
    auto m = build_split_model(spec, 5);
    // trunk: w [64x4], b [4]; heads: w [4x2], b [2]
    for (int pid : m.param_registry) {
        Tensor& t = m.graph.param_value(pid);
        std::fill(t.data.begin(), t.data.end(), 0.0);
    }
    Tensor& h0b = m.graph.param_value(m.head_params[0].back());
    h0b.data = {0.1, 0.9};
    Tensor& h1b = m.graph.param_value(m.head_params[1].back());
    h1b.data = {0.8, 0.2};
    auto tuples = m.predict(random_batch(spec, 1, 21));
    REQUIRE(tuples.size() == 1);
    CHECK(tuples[0] == LabelTuple{1, 0});

    h0b.data = {0.5, 0.5}; // exact tie -> lowest index
    tuples = m.predict(random_batch(spec, 1, 21));
    CHECK(tuples[0] == LabelTuple{0, 0});
}

TEST_CASE("binary head mode predicts the argmax head", "[model]") {
    SplitModelSpec spec;
    spec.family = Family::Mlp;
    spec.total_depth = 2;
    spec.shared_depth = 1;
    spec.trunk_width = 16;
    spec.factor_count = 4;
    spec.classes_per_factor = {1, 1, 1, 1};
    spec.input_shape = Shape{6};
    spec.use_bias = false;
    spec.head_mode = HeadMode::Binary;
    auto m = build_split_model(spec, 31);
    Tensor batch(Shape{3, 6});
    Rng rng(33);
    for (std::int64_t i = 0; i < batch.numel(); ++i) batch[i] = rng.uniform(-0.5, 0.5);
    auto logits = m.forward(batch);
    auto tuples = m.predict(batch);
    for (int i = 0; i < 3; ++i) {
        REQUIRE(tuples[static_cast<std::size_t>(i)].size() == 1);
        const int choice = tuples[static_cast<std::size_t>(i)][0];
        for (int f = 0; f < 4; ++f)
            CHECK(logits[static_cast<std::size_t>(f)].at2(i, 0) <=
                  logits[static_cast<std::size_t>(choice)].at2(i, 0));
    }
    // Summed binary loss trains: just verify a backward pass runs and fills
    // head gradients.
    m.set_minibatch(batch, {{0}, {2}, {3}});
    m.graph.forward();
    m.graph.backward(m.total_loss_id);
    bool any = false;
    for (double v : m.graph.grad(m.head_params[2][0]).data)
        if (v != 0.0) any = true;
    CHECK(any);
}

TEST_CASE("cnn family splits conv channels and the fc layer", "[model]") {
    SplitModelSpec spec;
    spec.family = Family::Cnn;
    spec.total_depth = 4; // 3 conv + 1 fc
    spec.shared_depth = 2;
    spec.trunk_width = 8;
    spec.fc_width = 12;
    spec.factor_count = 2;
    spec.classes_per_factor = {5, 5};
    spec.input_shape = Shape{6, 6, 3};
    auto m = build_split_model(spec, 41);
    CHECK(m.hidden_layer_totals == std::vector<int>{8, 8, 8, 12});
    Tensor batch(Shape{2, 6, 6, 3}, 0.25);
    auto logits = m.forward(batch);
    CHECK(logits[0].shape == Shape{2, 5});

    // every split point builds and runs
    for (int s = 0; s <= 4; ++s) {
        spec.shared_depth = s;
        auto ms = build_split_model(spec, 42);
        auto lg = ms.forward(batch);
        REQUIRE(lg.size() == 2);
        CHECK(lg[0].shape == Shape{2, 5});
        CHECK(lg[1].shape == Shape{2, 5});
    }
}

TEST_CASE("width below factor count falls back to one-node heads", "[model]") {
    auto m = build_split_model(mlp_spec(2, 1, 3, 4), 51);
    CHECK(m.notes.find("head-width-floor-hit") != std::string::npos);
    CHECK(m.spec.head_width() == 1);
    auto logits = m.forward(random_batch(m.spec, 2, 53));
    CHECK(logits.size() == 4);
}

TEST_CASE("narrow biased heads gradcheck cleanly from a generic point", "[model][gradcheck]") {
    // At zero-init biases a dead relu row puts the next pre-activation exactly
    // on the kink, where central differences are not a derivative estimate.
    // perturb_params moves the check to a generic point; seed 3100 used to
    // produce such a dead row in head 1 of this narrow two-head model.
    SplitModelSpec spec = mlp_spec(4, 0, 6, 2, 3);
    spec.classes_per_factor = {3, 4};
    spec.input_shape = Shape{5, 5};
    for (std::uint64_t seed : {3100ULL, 77ULL}) {
        SplitModel m = build_split_model(spec, seed);
        Rng rng(seed + 17);
        Tensor x = random_batch(m.spec, 3, seed + 1);
        std::vector<LabelTuple> labels;
        for (int i = 0; i < 3; ++i) labels.push_back({rng.uniform_int(3), rng.uniform_int(4)});
        m.set_minibatch(x, labels);
        perturb_params(m.graph, m.total_loss_id, seed + 2);
        auto rep = finite_difference_check(m.graph, m.total_loss_id, 1e-5, 1e-4);
        INFO("seed " << seed << " max rel " << rep.max_rel_error);
        CHECK(rep.passed);
    }
}

TEST_CASE("checkpoint round-trip preserves spec and parameters", "[model]") {
    auto m = build_split_model(mlp_spec(3, 2, 24), 61);
    Tensor batch = random_batch(m.spec, 4, 63);
    auto before = m.predict(batch);
    const std::string path = "checkpoint_roundtrip.sgl";
    save_checkpoint(m, path);
    auto loaded = load_checkpoint(path);
    CHECK(loaded.spec.total_depth == 3);
    CHECK(loaded.spec.shared_depth == 2);
    CHECK(loaded.notes == m.notes);
    for (int pid : m.param_registry)
        CHECK(loaded.graph.value(pid).data == m.graph.value(pid).data);
    CHECK(loaded.predict(batch) == before);

    // Truncated file fails closed.
    {
        std::ifstream in(path, std::ios::binary);
        std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        std::ofstream out(path, std::ios::binary);
        out.write(all.data(), static_cast<std::streamsize>(all.size() - 9));
    }
    CHECK_THROWS_AS(load_checkpoint(path), ParseError);
    std::remove(path.c_str());
}
