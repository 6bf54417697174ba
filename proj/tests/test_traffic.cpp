#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "gnnflavors/traffic.hpp"

using namespace gnnflavors;
using namespace gnnflavors::traffic;

namespace {
namespace fs = std::filesystem;

std::string write_temp(const std::string& name, const std::string& content) {
    const auto path = (fs::temp_directory_path() / name).string();
    std::ofstream out(path);
    out << content;
    return path;
}

TrafficTensor tensor_of_length(std::int64_t n_steps, std::int64_t n_nodes = 1) {
    TrafficTensor t;
    t.n_metrics = 1;
    t.n_nodes = n_nodes;
    t.n_steps = n_steps;
    t.granularity_minutes = 5;
    t.values.assign(static_cast<std::size_t>(n_nodes * n_steps), 50.0);
    t.observed.assign(t.values.size(), 1);
    for (std::int64_t l = 0; l < n_steps; ++l) t.timestamps.push_back(1000000 + l * 300);
    for (std::int64_t n = 0; n < n_nodes; ++n) t.node_ids.push_back("n" + std::to_string(n));
    return t;
}

}  // namespace

TEST_CASE("load_values_csv: exact toy fixture round-trip") {
    const std::string csv =
        "timestamp,a,b,c\n"
        "2012-03-01 00:00:00,60.5,0,30.25\n"
        "2012-03-01 00:05:00,61,45.5,31\n"
        "2012-03-01 00:10:00,59.5,46,0\n"
        "2012-03-01 00:15:00,60,46.5,32\n"
        "2012-03-01 00:20:00,60.25,47,33\n"
        "2012-03-01 00:25:00,60.5,47.5,34\n"
        "2012-03-01 00:30:00,60.75,48,35\n"
        "2012-03-01 00:35:00,61,48.5,36\n"
        "2012-03-01 00:40:00,61.25,49,37\n"
        "2012-03-01 00:45:00,61.5,49.5,38\n";
    const auto path = write_temp("gnnflavors_toy_values.csv", csv);
    auto t = load_values_csv(path);
    CHECK(t.n_nodes == 3);
    CHECK(t.n_steps == 10);
    CHECK(t.granularity_minutes == 5);
    CHECK(t.node_ids == std::vector<std::string>{"a", "b", "c"});
    CHECK(t.values[t.at(0, 0, 0)] == 60.5);
    CHECK(t.values[t.at(0, 2, 1)] == 31.0);
    // zeros are missing
    CHECK(t.observed[t.at(0, 1, 0)] == 0);
    CHECK(t.observed[t.at(0, 2, 2)] == 0);
    CHECK(t.observed[t.at(0, 0, 0)] == 1);
    CHECK(t.missing_fraction() == doctest::Approx(2.0 / 30.0));
    fs::remove(path);
}

TEST_CASE("load_values_csv: diagnostics for ragged and non-monotonic input") {
    const auto ragged = write_temp("gnnflavors_ragged.csv",
                                   "timestamp,a,b\n100,1,2\n400,3\n");
    CHECK_THROWS_AS(load_values_csv(ragged), LoadError);
    fs::remove(ragged);

    const auto nonmono = write_temp("gnnflavors_nonmono.csv",
                                    "timestamp,a\n300,1\n600,2\n500,3\n");
    CHECK_THROWS_AS(load_values_csv(nonmono), LoadError);
    fs::remove(nonmono);

    const auto irregular = write_temp("gnnflavors_irregular.csv",
                                      "timestamp,a\n300,1\n600,2\n1200,3\n");
    CHECK_THROWS_AS(load_values_csv(irregular), LoadError);
    fs::remove(irregular);
}

TEST_CASE("load_dataset: node count must match the adjacency") {
    const auto values = write_temp("gnnflavors_vals2.csv", "timestamp,a,b\n300,1,2\n600,3,4\n");
    const auto adj3 = write_temp("gnnflavors_adj3.csv", "0,1,0\n1,0,1\n0,1,0\n");
    CHECK_THROWS_AS(load_dataset(values, adj3), LoadError);
    const auto adj2 = write_temp("gnnflavors_adj2.csv", "0,1\n1,0\n");
    auto d = load_dataset(values, adj2);
    CHECK(d.tensor.n_nodes == 2);
    CHECK(d.road_graph.edges().size() == 2);  // directed entries
    fs::remove(values);
    fs::remove(adj3);
    fs::remove(adj2);
}

TEST_CASE("split_and_window: counting formula and boundaries") {
    WindowSpec w;
    w.obs_window = 12;
    w.forecast_window = 12;
    w.horizon_gap = 0;
    w.probes = {3, 6, 12};

    // train partition of exactly 100 steps -> 100 - 24 + 1 = 77 samples
    auto t = tensor_of_length(200);
    auto s = split_and_window(t, {0.5, 0.25, 0.25}, w);
    CHECK(s.train.end - s.train.begin == 100);
    CHECK(s.train.origins.size() == 77);
    CHECK(s.val.origins.size() == 27);
    CHECK(s.test.origins.size() == 27);

    // windows never straddle partitions and map one-to-one to origins
    for (auto l : s.train.origins) {
        CHECK(l - w.obs_window >= s.train.begin);
        CHECK(l + w.forecast_window <= s.train.end);
    }
    CHECK(s.val.origins.front() == s.val.begin + w.obs_window);
    CHECK(s.test.origins.back() == t.n_steps - w.forecast_window);

    // too short for a single window
    auto t2 = tensor_of_length(23);
    CHECK_THROWS_AS(split_and_window(t2, {0.7, 0.1, 0.2}, w), ContractError);

    // ratios must sum to one
    CHECK_THROWS_AS(split_and_window(t, {0.5, 0.2, 0.2}, w), ContractError);

    // the 7:1:2 split of a 34272-step series puts 23990 steps in train
    auto t3 = tensor_of_length(34272);
    auto s3 = split_and_window(t3, {0.7, 0.1, 0.2}, w);
    CHECK(s3.train.end == 23990);
    CHECK(s3.train.origins.size() == 23990 - 24 + 1);
}

TEST_CASE("scaler: degenerate guard, round-trip, and z-statistics") {
    auto t = tensor_of_length(50);  // constant 50
    auto s = Scaler::fit(t, 0, 50);
    CHECK(s.std == 1.0);  // guard
    CHECK(s.apply(50.0) == 0.0);

    Rng rng(3);
    auto t2 = tensor_of_length(300, 2);
    for (auto& v : t2.values) v = rng.uniform(20.0, 90.0);
    auto s2 = Scaler::fit(t2, 0, 300);
    for (int i = 0; i < 100; ++i) {
        const double x = rng.uniform(0.0, 80.0);
        CHECK(s2.invert(s2.apply(x)) == doctest::Approx(x).epsilon(1e-12));
    }
    // z-statistics on the fitted slice
    double zm = 0.0, zs = 0.0;
    for (double v : t2.values) zm += s2.apply(v);
    zm /= static_cast<double>(t2.values.size());
    for (double v : t2.values) zs += (s2.apply(v) - zm) * (s2.apply(v) - zm);
    zs = std::sqrt(zs / static_cast<double>(t2.values.size()));
    CHECK(std::abs(zm) <= 1e-10);
    CHECK(zs == doctest::Approx(1.0).epsilon(1e-10));

    // fixture with the whole-set moments of the reference dataset
    auto t3 = tensor_of_length(2);
    t3.values = {58.46 - 20.26, 58.46 + 20.26};
    auto s3 = Scaler::fit(t3, 0, 2);
    CHECK(s3.mean == doctest::Approx(58.46));
    CHECK(s3.std == doctest::Approx(20.26));
    CHECK(s3.apply(58.46) == doctest::Approx(0.0));

    // masked entries are excluded from fitting
    auto t4 = tensor_of_length(4);
    t4.values = {10.0, 0.0, 20.0, 0.0};
    t4.observed = {1, 0, 1, 0};
    auto s4 = Scaler::fit(t4, 0, 4);
    CHECK(s4.mean == doctest::Approx(15.0));
    t4.observed = {0, 0, 0, 0};
    CHECK_THROWS_AS(Scaler::fit(t4, 0, 4), ContractError);
}

TEST_CASE("copy_last_steps: repeats the last observation") {
    auto t = tensor_of_length(20, 2);
    for (std::int64_t l = 0; l < 20; ++l) {
        t.values[t.at(0, 0, l)] = static_cast<double>(l);
        t.values[t.at(0, 1, l)] = 61.0;
    }
    WindowSpec w;
    w.obs_window = 4;
    w.forecast_window = 3;
    auto f = copy_last_steps(t, 10, w);
    CHECK(f == std::vector<double>{9, 9, 9, 61, 61, 61});
}

TEST_CASE("historical_average: constant data, horizon invariance, weekly slots") {
    // two identical weeks of data at 1-hour granularity
    const std::int64_t gran_min = 60;
    const std::int64_t steps = 2 * 7 * 24;
    TrafficTensor t;
    t.n_metrics = 1;
    t.n_nodes = 1;
    t.n_steps = steps;
    t.granularity_minutes = gran_min;
    t.values.resize(static_cast<std::size_t>(steps));
    t.observed.assign(static_cast<std::size_t>(steps), 1);
    t.node_ids = {"x"};
    for (std::int64_t l = 0; l < steps; ++l) {
        t.timestamps.push_back(l * 3600);
        t.values[static_cast<std::size_t>(l)] = 30.0 + static_cast<double>(l % (7 * 24));
    }

    auto h = HistoricalAverage::fit(t, 0, steps);
    // prediction for any wall-clock time matches that slot's training mean
    for (std::int64_t l = 0; l < 7 * 24; ++l)
        CHECK(h.predict(0, l * 3600) ==
              doctest::Approx(30.0 + static_cast<double>(l)).epsilon(1e-12));
    // horizon invariance: only the target timestamp matters
    CHECK(h.predict(0, 5 * 3600) == h.predict(0, 5 * 3600 + 7 * 24 * 3600));

    // constant training data predicts the constant everywhere
    auto tc = tensor_of_length(100);
    auto hc = HistoricalAverage::fit(tc, 0, 100);
    CHECK(hc.predict(0, 123456789) == doctest::Approx(50.0));
}

TEST_CASE("traffic_metrics: hand arithmetic with masked entries") {
    // one window, three nodes, forecast window 1
    std::vector<double> target = {60.0, 0.0, 30.0};
    std::vector<double> pred = {54.0, 10.0, 33.0};
    std::vector<std::uint8_t> mask = {1, 0, 1};
    auto m = traffic_metrics(pred, target, mask, 1, 3, 1, {1});
    REQUIRE(m.size() == 1);
    CHECK(m[0].mape == doctest::Approx(10.0).epsilon(1e-12));
    CHECK(m[0].mae == doctest::Approx(4.5).epsilon(1e-12));
    CHECK(m[0].count == 2);

    // perfect prediction
    auto perfect = traffic_metrics(target, target, {1, 0, 1}, 1, 3, 1, {1});
    CHECK(perfect[0].rmse == 0.0);
    CHECK(perfect[0].mae == 0.0);
    CHECK(perfect[0].mape == 0.0);

    // all masked -> error naming the probe
    try {
        traffic_metrics(pred, target, {0, 0, 0}, 1, 3, 1, {1});
        CHECK(false);
    } catch (const ContractError& e) {
        CHECK(std::string(e.what()).find("probe 1") != std::string::npos);
    }
}

TEST_CASE("traffic_metrics: degrading one entry strictly increases all metrics at its probe") {
    Rng rng(17);
    const std::int64_t W = 4, N = 3, F = 6;
    std::vector<double> target(static_cast<std::size_t>(W * N * F));
    std::vector<std::uint8_t> mask(target.size(), 1);
    for (auto& v : target) v = rng.uniform(30.0, 70.0);
    auto pred = target;  // perfect
    // degrade window 2, node 1, step 4 (probe 5)
    const std::size_t idx = static_cast<std::size_t>((2 * N + 1) * F + 4);
    pred[idx] += 7.5;
    auto before = traffic_metrics(target, target, mask, W, N, F, {5, 6});
    auto after = traffic_metrics(pred, target, mask, W, N, F, {5, 6});
    CHECK(after[0].rmse > before[0].rmse);
    CHECK(after[0].mae > before[0].mae);
    CHECK(after[0].mape > before[0].mape);
    // untouched probe is unchanged
    CHECK(after[1].rmse == before[1].rmse);
    CHECK(after[1].mae == before[1].mae);
}

TEST_CASE("synthetic dataset: deterministic, CSV round-trip, shrink") {
    auto d1 = make_synthetic_dataset(8, 300, 5, 0.05, 99);
    auto d2 = make_synthetic_dataset(8, 300, 5, 0.05, 99);
    CHECK(d1.tensor.values == d2.tensor.values);
    CHECK(d1.tensor.missing_fraction() == doctest::Approx(0.05).epsilon(0.5));
    d1.tensor.validate();

    const auto vp = (fs::temp_directory_path() / "gnnflavors_synth_vals.csv").string();
    const auto ap = (fs::temp_directory_path() / "gnnflavors_synth_adj.csv").string();
    write_values_csv(vp, d1.tensor);
    write_adjacency_csv(ap, d1.road_graph.dense_adjacency(), d1.tensor.n_nodes);
    auto reloaded = load_dataset(vp, ap);
    CHECK(reloaded.tensor.n_nodes == 8);
    CHECK(reloaded.tensor.n_steps == 300);
    for (std::size_t i = 0; i < d1.tensor.values.size(); ++i)
        CHECK(reloaded.tensor.values[i] == doctest::Approx(d1.tensor.values[i]).epsilon(1e-15));
    CHECK(reloaded.tensor.observed == d1.tensor.observed);
    fs::remove(vp);
    fs::remove(ap);

    auto small = shrink_dataset(d1, 4, 100);
    CHECK(small.tensor.n_nodes == 4);
    CHECK(small.tensor.n_steps == 100);
    CHECK(small.adjacency.n == 4);
    CHECK(small.tensor.values[small.tensor.at(0, 2, 50)] == d1.tensor.values[d1.tensor.at(0, 2, 50)]);
}

TEST_CASE("assemble_batch: scaled observations and raw masked targets") {
    auto t = tensor_of_length(30, 2);
    for (std::int64_t l = 0; l < 30; ++l) {
        t.values[t.at(0, 0, l)] = 40.0 + static_cast<double>(l);
        t.values[t.at(0, 1, l)] = 60.0;
    }
    t.values[t.at(0, 1, 12)] = 0.0;  // missing target
    t.observed[t.at(0, 1, 12)] = 0;

    WindowSpec w;
    w.obs_window = 4;
    w.forecast_window = 2;
    Scaler s;
    s.mean = 50.0;
    s.std = 10.0;
    auto batch = assemble_batch(t, {10, 12}, w, s);
    CHECK(batch.input->shape == tg::Shape{2, 1, 2, 4});
    CHECK(batch.target_raw->shape == tg::Shape{2, 1, 2, 2});
    // origin 10: observations are steps 6..9 of node 0: 46..49 scaled
    CHECK(batch.input->data[0] == doctest::Approx((46.0 - 50.0) / 10.0));
    CHECK(batch.input->data[3] == doctest::Approx((49.0 - 50.0) / 10.0));
    // targets are raw steps 10..11
    CHECK(batch.target_raw->data[0] == doctest::Approx(50.0));
    CHECK(batch.target_raw->data[1] == doctest::Approx(51.0));
    // node 1 target at absolute step 12 is masked for the origin-12 window...
    // origin 12 targets cover steps 12,13 -> mask 0 then 1 for node 1
    CHECK(batch.target_mask[static_cast<std::size_t>((1 * 2 + 1) * 2 + 0)] == 0);
    CHECK(batch.target_mask[static_cast<std::size_t>((1 * 2 + 1) * 2 + 1)] == 1);
}

TEST_CASE("train_traffic: smoke run on a small synthetic dataset") {
    auto data = make_synthetic_dataset(10, 400, 5, 0.03, 7);
    TrafficTrainConfig cfg;
    cfg.window.obs_window = 12;
    cfg.window.forecast_window = 6;
    cfg.window.probes = {1, 3, 6};
    cfg.net.flavor = wavenet::Flavor::diffusion;
    cfg.net.residual_channels = 8;
    cfg.net.skip_channels = 8;
    cfg.net.decoder_hidden = 32;
    cfg.net.diffusion_hops = 1;
    cfg.net.adaptive_width = 2;
    cfg.max_steps = 60;
    cfg.eval_every = 30;
    cfg.batch_windows = 4;
    cfg.val_subset = 16;

    auto r = train_traffic(data, cfg, 3, nullptr);
    CHECK_FALSE(r.failed);
    REQUIRE(r.test_metrics.size() == 3);
    REQUIRE(r.copy_last_metrics.size() == 3);
    CHECK(r.test_metrics[0].count > 0);
    CHECK(r.steps_run == 60);
    CHECK(r.param_count > 0);
    for (const auto& m : r.copy_last_metrics) CHECK(m.mae > 0.0);
}
