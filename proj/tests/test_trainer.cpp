// Copyright 2026 The sparsecomm Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "doctest.h"
#include "helpers.hpp"
#include "sparsecomm/trainer.hpp"

using namespace sparsecomm;
using testutil::ModelBuilder;

namespace {

Dataset small_data(std::uint64_t seed = 1) {
    SyntheticConfig sc;
    sc.seed = seed;
    sc.train_per_class = 6;
    sc.test_per_class = 4;
    return make_synthetic_dataset(sc);
}

TrainConfig quick_config() {
    TrainConfig c;
    c.epochs_dense = 1;
    c.schedule = {{0.5, 1}, {0.9, 1}};
    return c;
}

// conv -> maxpool -> conv -> add -> avgpool -> dense
ModelSpec tiny_composition(bool relu, PoolType pool) {
    ModelBuilder b({2, 6, 6});
    int x = b.conv(-1, 4, 3, 1, 1, relu, true);
    x = b.pool(x, pool, 2, 2);
    const int y = b.conv(x, 4, 3, 1, 1, relu, true);
    x = b.add(y, x, relu);
    x = b.pool(x, PoolType::avg, 3, 1);
    b.dense(x, 4, false, true);
    b.model.num_classes = 4;
    return b.model;
}

void max_abs_pruned(const ModelSpec& m, const WeightStore& w, const BlockMask& mask) {
    for (const LayerWeights& lw : w.layers()) {
        const LayerMask* lm = mask.layer(lw.layer_id);
        if (!lm) continue;
        const LayerSpec& l = m.layers[lw.layer_id];
        const std::size_t kk = static_cast<std::size_t>(l.kernel_h) * l.kernel_w;
        for (int o = 0; o < l.out_features; ++o)
            for (int f = 0; f < l.in_features; ++f)
                if (!lm->keep(f, o))
                    for (std::size_t t = 0; t < kk; ++t)
                        REQUIRE(lw.weights[(static_cast<std::size_t>(o) * l.in_features + f) * kk + t] == 0.0f);
    }
}

}  // namespace

TEST_CASE("synthetic dataset") {
    const Dataset a = small_data(3), b = small_data(3), c = small_data(4);
    CHECK(a.train_images == b.train_images);
    CHECK(a.train_images != c.train_images);
    CHECK(a.train_size() == 60);
    CHECK(a.test_size() == 40);
    CHECK(a.image_shape == Shape3{1, 28, 28});
    for (int k = 0; k < 10; ++k) CHECK(std::count(a.train_labels.begin(), a.train_labels.end(), k) == 6);
    CHECK(a.train_images != std::vector<float>(a.test_images.begin(), a.test_images.begin() + a.train_images.size()));
    SyntheticConfig bad;
    bad.noise_stddev = -1.0;
    CHECK_THROWS_AS(make_synthetic_dataset(bad), DomainError);
}

TEST_CASE("train config validation") {
    TrainConfig c;
    CHECK_NOTHROW(c.validate());
    c.schedule = {{0.5, 1}, {0.5, 1}};
    CHECK_THROWS_AS(c.validate(), DomainError);
    c.schedule = {{0.5, 0}};
    CHECK_THROWS_AS(c.validate(), DomainError);
    c.schedule = {{1.2, 1}};
    CHECK_THROWS_AS(c.validate(), DomainError);
}

TEST_CASE("zero learning rate leaves weights unchanged") {
    const ModelSpec m = toy_cnn_shapes();
    const Dataset d = small_data();
    WeightStore w = WeightStore::random(m, 1);
    const WeightStore before = w;
    train_epochs(m, w, BlockMask::dense(m, 2), d, 2, 0.0, 0.5, 1, 0.9, 8, 1);
    CHECK(w == before);
}

TEST_CASE("training is deterministic") {
    const ModelSpec m = toy_cnn_shapes();
    const Dataset d = small_data();
    TrainConfig c = quick_config();
    const DenseResult a = train_dense(m, d, c);
    const DenseResult b = train_dense(m, d, c);
    CHECK(a.weights == b.weights);
    c.seed = 2;
    CHECK_FALSE(train_dense(m, d, c).weights == a.weights);
}

TEST_CASE("huge learning rate reports divergence") {
    const ModelSpec m = toy_cnn_shapes();
    const Dataset d = small_data();
    WeightStore w = WeightStore::random(m, 1);
    try {
        train_epochs(m, w, BlockMask::dense(m, 2), d, 3, 1e12, 1.0, 1, 0.9, 4, 1);
        FAIL("expected DivergenceError");
    } catch (const DivergenceError& e) {
        CHECK(e.epoch() >= 1);
    }
}

TEST_CASE("finetuning under a dense mask is continued dense training") {
    const ModelSpec m = toy_cnn_shapes();
    const Dataset d = small_data();
    const TrainConfig c = quick_config();
    const WeightStore start = WeightStore::random(m, 4);
    const WeightStore a = finetune_masked(m, start, BlockMask::dense(m, 2), d, 1, 0.01, c, 3);
    WeightStore b = start;
    train_epochs(m, b, BlockMask::dense(m, 2), d, 1, 0.01, 1.0, 1, c.momentum, c.batch_size, c.seed, 3);
    CHECK(a == b);
}

TEST_CASE("prune schedule") {
    const ModelSpec m = toy_cnn_shapes();
    const Dataset d = small_data();
    SUBCASE("pruned weights stay zero and masks are nested") {
        const auto cps = iterative_disco(m, d, quick_config());
        REQUIRE(cps.size() == 3);
        CHECK(cps[0].mask == BlockMask::dense(m, 2));
        for (std::size_t k = 0; k < cps.size(); ++k) {
            max_abs_pruned(m, cps[k].weights, cps[k].mask);
            if (k == 0) continue;
            for (std::size_t id = 0; id < m.layers.size(); ++id) {
                const LayerMask* prev = cps[k - 1].mask.layer(static_cast<int>(id));
                const LayerMask* cur = cps[k].mask.layer(static_cast<int>(id));
                if (!prev) continue;
                for (int f = 0; f < prev->in_features(); ++f)
                    for (int o = 0; o < prev->out_features(); ++o)
                        if (!prev->keep(f, o)) CHECK_FALSE(cur->keep(f, o));
            }
        }
        for (const LayerSparsity& s : sparsity_stats(cps[2].mask))
            CHECK(s.sent_messages == s.possible_messages - prune_budget(0.9, s.possible_messages));
    }
    SUBCASE("empty schedule returns the dense model only") {
        TrainConfig c = quick_config();
        c.schedule.clear();
        const auto cps = iterative_disco(m, d, c);
        REQUIRE(cps.size() == 1);
        CHECK(cps[0].p == 0.0);
    }
    SUBCASE("full pruning yields independent branches") {
        TrainConfig c = quick_config();
        c.schedule = {{1.0, 1}};
        const auto cps = iterative_disco(m, d, c);
        CHECK(cps.back().mask == pattern_independent(m, 2));
    }
    SUBCASE("one-shot scoring and random strategy") {
        TrainConfig c = quick_config();
        c.one_shot = true;
        CHECK(iterative_disco(m, d, c).size() == 3);
        c.strategy = SelectStrategy::random;
        c.one_shot = false;
        const auto cps = iterative_disco(m, d, c);
        max_abs_pruned(m, cps.back().weights, cps.back().mask);
    }
    SUBCASE("starting above the schedule is an error") {
        TrainConfig c = quick_config();
        StageCheckpoint start{0, 0.95, pattern_independent(m, 2), WeightStore::random(m, 1), 0.0};
        CHECK_THROWS_AS(prune_schedule(m, d, c, start), DomainError);
    }
}

TEST_CASE("evaluation") {
    const ModelSpec m = toy_cnn_shapes();
    SyntheticConfig sc;
    sc.train_per_class = 1;
    sc.test_per_class = 100;
    const Dataset d = make_synthetic_dataset(sc);
    const WeightStore w = WeightStore::random(m, 9);
    SUBCASE("untrained net is near chance") {
        // Binomial(1000, 0.1) has a standard deviation under 0.01; an untrained
        // net may still favour one class, which caps accuracy at 0.1.
        const double acc = evaluate(m, w, BlockMask::dense(m, 2), d);
        CHECK(acc <= 0.2);
    }
    SUBCASE("masked weights equal explicitly zeroed weights") {
        const BlockMask mask = select_model(m, w, 2, 0.8, SelectStrategy::random, 3);
        WeightStore zeroed = w;
        apply_mask(m, mask, zeroed);
        CHECK(evaluate(m, w, mask, d) == evaluate(m, zeroed, BlockMask::dense(m, 2), d));
    }
    SUBCASE("node count does not change the function") {
        const double a = evaluate(m, w, BlockMask::dense(m, 2), d);
        CHECK(evaluate(m, w, BlockMask::dense(m, 4), d) == a);
        CHECK(evaluate(m, w, BlockMask(), d) == a);
    }
}

TEST_CASE("gradient check") {
    const Tensor x = testutil::random_tensor({2, 6, 6}, 3);
    SUBCASE("linear composition is exact") {
        const ModelSpec m = tiny_composition(false, PoolType::avg);
        const WeightStore w = WeightStore::random(m, 1);
        CHECK(gradient_check(m, w, BlockMask::dense(m, 2), x, 1, 200) <= 1e-6);
    }
    SUBCASE("nonlinear compositions") {
        for (PoolType pool : {PoolType::max, PoolType::avg}) {
            const ModelSpec m = tiny_composition(true, pool);
            const WeightStore w = WeightStore::random(m, 2);
            CHECK(gradient_check(m, w, BlockMask::dense(m, 2), x, 2, 200) <= 1e-3);
            const BlockMask mask = select_model(m, w, 2, 0.5, SelectStrategy::l1);
            CHECK(gradient_check(m, w, mask, x, 0, 200) <= 1e-3);
        }
    }
    SUBCASE("depthwise layer") {
        ModelBuilder b({4, 6, 6});
        int y = b.conv(-1, 4, 3, 1, 1, false, true);
        y = b.dwconv(y, 3, 2, 1, false);
        y = b.pool(y, PoolType::avg, 3, 1);
        b.dense(y, 3, false, false);
        const WeightStore w = WeightStore::random(b.model, 3);
        CHECK(gradient_check(b.model, w, BlockMask::dense(b.model, 2), testutil::random_tensor({4, 6, 6}, 4), 1,
                             200) <= 1e-3);
    }
    SUBCASE("pruned kernels receive exactly zero gradient") {
        const ModelSpec m = tiny_composition(true, PoolType::max);
        const WeightStore w = WeightStore::random(m, 2);
        const BlockMask mask = pattern_independent(m, 2);
        const GradientResult g = compute_gradients(m, w, mask, x, 3);
        int pos = 0;
        for (const LayerWeights& lw : w.layers()) {
            const LayerSpec& l = m.layers[lw.layer_id];
            const LayerMask* lm = mask.layer(lw.layer_id);
            const std::size_t kk = static_cast<std::size_t>(l.kernel_h) * l.kernel_w;
            for (int o = 0; o < l.out_features; ++o)
                for (int f = 0; f < l.in_features; ++f)
                    for (std::size_t t = 0; t < kk; ++t) {
                        const double v = g.weight_grads[pos][(static_cast<std::size_t>(o) * l.in_features + f) * kk + t];
                        if (!lm->keep(f, o)) CHECK(v == 0.0);
                    }
            ++pos;
        }
    }
}

TEST_CASE("dense baseline learns the synthetic task") {
    const ModelSpec m = toy_cnn_shapes();
    const Dataset d = make_synthetic_dataset(SyntheticConfig{});
    TrainConfig c;
    c.epochs_dense = 10;
    const DenseResult r = train_dense(m, d, c);
    CHECK(r.history.size() == 10);
    CHECK(r.history.back().test_accuracy > 0.6);
}
