#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "gnnflavors/rmsg.hpp"

using namespace gnnflavors;
using namespace gnnflavors::rmsg;

namespace {

// Independent brute-force oracle: explicit double loop over the dense
// adjacency, no shared code with rmsg_labels.
std::vector<double> brute_force_labels(const graph::Graph& g, const std::vector<double>& x) {
    const int n = g.n_nodes();
    auto a = g.dense_adjacency();
    std::vector<double> y(static_cast<std::size_t>(n), 0.0);
    for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        int deg = 0;
        for (int j = 0; j < n; ++j) {
            if (a[static_cast<std::size_t>(i) * n + j] > 0.0) {
                const double p = x[static_cast<std::size_t>(i)] * x[static_cast<std::size_t>(j)];
                acc += p * p;
                ++deg;
            }
        }
        if (deg > 0) y[static_cast<std::size_t>(i)] = std::sqrt(acc / deg);
    }
    return y;
}

}  // namespace

TEST_CASE("rmsg_labels: zero features give zero labels") {
    auto g = graph::gen_er_graph(20, 0.3, 1);
    std::vector<double> x(20, 0.0);
    for (double v : rmsg_labels(g, x)) CHECK(v == 0.0);
}

TEST_CASE("rmsg_labels: single edge with unit features") {
    graph::Graph g(2, false, {{0, 1, 1.0}});
    auto y = rmsg_labels(g, {1.0, 1.0});
    CHECK(y[0] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(y[1] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("rmsg_labels: path graph hand evaluation") {
    graph::Graph g(3, false, {{0, 1, 1.0}, {1, 2, 1.0}});
    auto y = rmsg_labels(g, {1.0, 2.0, -1.0});
    // node 1: sqrt((4 + 4)/2) = 2; nodes 0 and 2: sqrt(4/1) = 2
    CHECK(y[0] == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(y[1] == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(y[2] == doctest::Approx(2.0).epsilon(1e-15));

    auto oracle = brute_force_labels(g, {1.0, 2.0, -1.0});
    for (int i = 0; i < 3; ++i) CHECK(y[static_cast<std::size_t>(i)] == oracle[static_cast<std::size_t>(i)]);
}

TEST_CASE("rmsg_labels: isolated nodes keep label zero") {
    graph::Graph g(3, false, {{0, 1, 1.0}});
    auto y = rmsg_labels(g, {0.5, -1.5, 2.0});
    CHECK(y[2] == 0.0);
    CHECK(y[0] > 0.0);
}

TEST_CASE("rmsg_labels: agrees with brute-force oracle on random graphs") {
    Rng rng(7);
    for (int trial = 0; trial < 120; ++trial) {
        const int n = 2 + static_cast<int>(rng.next_below(30));
        auto g = graph::gen_er_graph(n, rng.uniform(0.05, 0.6), 1000 + static_cast<std::uint64_t>(trial));
        std::vector<double> x(static_cast<std::size_t>(n));
        for (auto& v : x) v = rng.uniform(-2.0, 2.0);
        auto got = rmsg_labels(g, x);
        auto want = brute_force_labels(g, x);
        for (int i = 0; i < n; ++i)
            CHECK(std::abs(got[static_cast<std::size_t>(i)] - want[static_cast<std::size_t>(i)]) <= 1e-12);
    }
}

TEST_CASE("rmsg_labels: sign flip of features leaves labels unchanged") {
    Rng rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        auto g = graph::gen_er_graph(15, 0.3, 2000 + static_cast<std::uint64_t>(trial));
        std::vector<double> x(15), xn(15);
        for (std::size_t i = 0; i < 15; ++i) {
            x[i] = rng.uniform(-2.0, 2.0);
            xn[i] = -x[i];
        }
        auto y1 = rmsg_labels(g, x);
        auto y2 = rmsg_labels(g, xn);
        for (std::size_t i = 0; i < 15; ++i) CHECK(y1[i] == doctest::Approx(y2[i]).epsilon(1e-15));
    }
}

TEST_CASE("make_rmsg_sample: deterministic per (seed, k) and respects bounds") {
    DatasetSpec spec{100, 0.1, 42};
    auto a = make_rmsg_sample(spec, 7);
    auto b = make_rmsg_sample(spec, 7);
    CHECK(a.x == b.x);
    CHECK(a.y == b.y);
    CHECK(a.graph.edges().size() == b.graph.edges().size());

    auto c = make_rmsg_sample(spec, 8);
    CHECK(a.x != c.x);

    for (double v : a.x) {
        CHECK(v >= -2.0);
        CHECK(v <= 2.0);
    }
    for (double v : a.y) CHECK(v >= 0.0);
}

TEST_CASE("make_rmsg_sample: feature mean matches the uniform moment oracle") {
    // 1e6 draws: x ~ U[-2,2] has sd 4/sqrt(12); the sample mean should fall
    // within 4 sigma of zero.
    DatasetSpec spec{100, 0.1, 77};
    double sum = 0.0;
    std::int64_t count = 0;
    for (std::int64_t k = 0; k < 10000; ++k) {
        auto s = make_rmsg_sample(spec, k);
        for (double v : s.x) sum += v;
        count += static_cast<std::int64_t>(s.x.size());
    }
    CHECK(count == 1000000);
    const double mean = sum / static_cast<double>(count);
    CHECK(std::abs(mean) <= 4.0 * (4.0 / std::sqrt(12.0)) / 1000.0);
}

TEST_CASE("eval_metrics: perfect, mean, and hand-arithmetic cases") {
    std::vector<double> y = {1.0, 2.0, 3.0};
    auto perfect = eval_metrics(y, y);
    CHECK(perfect.rmse == 0.0);
    CHECK(perfect.mae == 0.0);
    CHECK(perfect.r2 == 1.0);

    std::vector<double> mean_pred(3, 2.0);  // mean of y
    auto at_mean = eval_metrics(y, mean_pred);
    CHECK(at_mean.r2 == doctest::Approx(0.0).epsilon(1e-15));

    auto m = eval_metrics({0.0, 1.0}, {0.0, 0.0});
    CHECK(m.rmse == doctest::Approx(std::sqrt(0.5)).epsilon(1e-15));
    CHECK(m.mae == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(m.r2 == doctest::Approx(-1.0).epsilon(1e-15));  // can be negative

    CHECK_THROWS_AS(eval_metrics({1.0, 2.0}, {1.0}), ContractError);
    CHECK_THROWS_AS(eval_metrics({1.0}, {1.0}), ContractError);
    CHECK_THROWS_AS(eval_metrics({2.0, 2.0}, {1.0, 1.0}), DomainError);
}

TEST_CASE("eval_metrics: sanity bounds on random data") {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> y(50), h(50);
        for (std::size_t i = 0; i < 50; ++i) {
            y[i] = rng.uniform(0.0, 3.0);
            h[i] = rng.uniform(0.0, 3.0);
        }
        auto m = eval_metrics(y, h);
        CHECK(m.r2 <= 1.0);
        double me = 0.0;
        for (std::size_t i = 0; i < 50; ++i) me += y[i] - h[i];
        me /= 50.0;
        CHECK(m.rmse >= std::abs(me) - 1e-12);
        CHECK(m.rmse >= 0.0);
    }
}

TEST_CASE("metrics accumulator merge equals single pass") {
    Rng rng(11);
    std::vector<double> y(64), h(64);
    for (std::size_t i = 0; i < 64; ++i) {
        y[i] = rng.uniform(0.0, 2.0);
        h[i] = rng.uniform(0.0, 2.0);
    }
    auto whole = eval_metrics(y, h);
    MetricsAccumulator a, b;
    a.add({y.begin(), y.begin() + 20}, {h.begin(), h.begin() + 20});
    b.add({y.begin() + 20, y.end()}, {h.begin() + 20, h.end()});
    a.merge(b);
    auto m = a.finalize();
    CHECK(m.rmse == doctest::Approx(whole.rmse).epsilon(1e-14));
    CHECK(m.mae == doctest::Approx(whole.mae).epsilon(1e-14));
    CHECK(m.r2 == doctest::Approx(whole.r2).epsilon(1e-14));
}

TEST_CASE("average model: fit equals the pooled label mean oracle") {
    DatasetSpec spec{50, 0.15, 13};
    const double fit = average_model_fit(spec, 64);
    double sum = 0.0;
    std::int64_t n = 0;
    for (std::int64_t k = 0; k < 64; ++k) {
        auto s = make_rmsg_sample(spec, k);
        for (double v : s.y) sum += v;
        n += static_cast<std::int64_t>(s.y.size());
    }
    CHECK(fit == doctest::Approx(sum / static_cast<double>(n)).epsilon(1e-15));

    // R^2 of the constant predictor on a held-out stream sits near zero
    DatasetSpec test{100, 0.1, 14};
    const double mean_label = average_model_fit(DatasetSpec{100, 0.1, 15}, 2048);
    auto m = average_model_eval(mean_label, test, 2048, 2);
    CHECK(std::abs(m.r2) <= 0.05);
    CHECK(m.rmse > 0.5);
    CHECK(m.rmse < 0.9);
}

TEST_CASE("residual_analysis: trivial and hand-binned cases") {
    std::vector<double> y = {0.0, 1.0, 2.0, 3.0};
    auto zero = residual_analysis(y, y, 4, 2);
    for (double r : zero.residuals) CHECK(r == 0.0);
    for (double m : zero.label_bin_mean_residual) CHECK(m == 0.0);

    std::vector<double> shifted(4);
    for (std::size_t i = 0; i < 4; ++i) shifted[i] = y[i] - 0.3;
    auto s = residual_analysis(y, shifted, 4, 2);
    for (double r : s.residuals) CHECK(r == doctest::Approx(0.3).epsilon(1e-15));
    for (double m : s.label_bin_mean_residual) CHECK(m == doctest::Approx(0.3).epsilon(1e-15));

    auto rep = residual_analysis(y, {1.0, 1.0, 2.0, 2.0}, 4, 2);
    REQUIRE(rep.label_bin_mean_residual.size() == 2);
    CHECK(rep.label_bin_mean_residual[0] == doctest::Approx(-0.5).epsilon(1e-15));
    CHECK(rep.label_bin_mean_residual[1] == doctest::Approx(0.5).epsilon(1e-15));

    std::int64_t total = 0;
    for (auto c : rep.hist_counts) total += c;
    CHECK(total == 4);

    CHECK_THROWS_AS(residual_analysis(y, {1.0}, 4, 2), ContractError);
    CHECK_THROWS_AS(residual_analysis(y, y, 1, 2), ContractError);
}

TEST_CASE("mlp parameter count formula: [1,h,1] has 3h+1 parameters") {
    Rng rng(3);
    for (std::int64_t h : {4, 16, 64}) {
        auto m = tg::Mlp::make({1, h, 1}, tg::Activation::relu, rng, "m");
        CHECK(m.param_count() == 3 * h + 1);
    }
}

TEST_CASE("train_rmsg: tiny run is deterministic and improves on the average model") {
    RmsgConfig cfg;
    cfg.flavor = RmsgFlavor::mpnn;
    cfg.hidden = 8;
    cfg.mpnn_width = 8;
    cfg.lr = 3e-3;
    cfg.train_samples = 1024;
    cfg.val_samples = 256;
    cfg.test_samples = 512;
    cfg.eval_interval = 0;
    cfg.eval_threads = 2;

    auto r1 = train_rmsg(cfg, 5, nullptr);
    auto r2 = train_rmsg(cfg, 5, nullptr);
    CHECK_FALSE(r1.failed);
    CHECK(r1.test.rmse == r2.test.rmse);  // bit-identical rerun
    CHECK(r1.test.mae == r2.test.mae);
    CHECK(r1.test.r2 == r2.test.r2);
    CHECK(r1.test.r2 > 0.5);  // even 1k samples beats the constant baseline easily

    auto r3 = train_rmsg(cfg, 6, nullptr);
    CHECK(r3.test.rmse != r1.test.rmse);  // different seed, different run
}

TEST_CASE("train_rmsg: average flavor runs through the same entry point") {
    RmsgConfig cfg;
    cfg.flavor = RmsgFlavor::average;
    cfg.train_samples = 512;
    cfg.val_samples = 128;
    cfg.test_samples = 512;
    auto r = train_rmsg(cfg, 3, nullptr);
    CHECK_FALSE(r.failed);
    CHECK(std::abs(r.test.r2) < 0.1);
}

TEST_CASE("report emission: csv and json round out") {
    namespace fs = std::filesystem;
    RmsgRunReport report;
    RunResult a;
    a.seed = 1;
    a.test = {0.1, 0.05, 0.9, 100};
    a.param_count = 321;
    RunResult b = a;
    b.seed = 2;
    b.test = {0.2, 0.15, 0.8, 100};
    report.runs = {a, b};

    CHECK(report.mean().r2 == doctest::Approx(0.85));
    CHECK(report.stddev().r2 == doctest::Approx(std::sqrt(0.005)).epsilon(1e-12));

    const auto dir = fs::temp_directory_path();
    write_report_csv((dir / "gnnflavors_rep.csv").string(), report);
    write_report_json((dir / "gnnflavors_rep.json").string(), report, "mpnn");
    std::ifstream csv(dir / "gnnflavors_rep.csv");
    std::string line;
    std::getline(csv, line);
    CHECK(line == "seed,failed,rmse,mae,r2,param_count,steps");
    int rows = 0;
    while (std::getline(csv, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 2);
    fs::remove(dir / "gnnflavors_rep.csv");
    fs::remove(dir / "gnnflavors_rep.json");
}
