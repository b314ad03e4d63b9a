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

#include <random>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "sparsecomm/latency.hpp"

using namespace sparsecomm;
using doctest::Approx;

namespace {

SystemConfig make_system(double bandwidth, double compute, int nodes) {
    SystemConfig s;
    s.name = "test";
    s.bandwidth = bandwidth;
    s.compute = compute;
    s.nodes = nodes;
    return s;
}

LayerSpec conv3x3_256() {
    LayerSpec l;
    l.kind = LayerKind::conv2d;
    l.in_features = l.out_features = 256;
    l.kernel_h = l.kernel_w = 3;
    l.in_height = l.in_width = 14;
    l.padding = 1;
    l.sparsifiable = true;
    return l;
}

}  // namespace

TEST_CASE("communication and computation latency") {
    CHECK(comm_latency(3.75e7, 0.9, 3.75e7) == Approx(0.1).epsilon(1e-12));
    CHECK(comm_latency(3.75e7, 1.0, 3.75e7) == 0.0);
    CHECK(comm_latency(200704, 0.0, 3.75e7) == Approx(5.352e-3).epsilon(1e-3));
    CHECK(comp_latency(8.2e9, 0.45, 2, 1.25e11) == Approx(18.04e-3).epsilon(1e-12));
    CHECK(comp_latency(8.2e9, 1.0, 2, 1.25e11) == 0.0);
    CHECK(comp_latency(8.2e9, 0.0, 1, 1.25e11) == Approx(8.2e9 / 1.25e11).epsilon(1e-15));
}

TEST_CASE("sparsity conversion") {
    CHECK(scomm_scomp_convert(2, 0.45, SparsityDirection::comp_to_comm) == Approx(0.9));
    CHECK(scomm_scomp_convert(2, 0.9, SparsityDirection::comm_to_comp) == Approx(0.45));
    CHECK(scomm_scomp_convert(7, 0.0, SparsityDirection::comp_to_comm) == 0.0);
    CHECK(scomm_scomp_convert(4, 0.75, SparsityDirection::comp_to_comm) == Approx(1.0));
    CHECK_THROWS_AS(scomm_scomp_convert(2, 0.6, SparsityDirection::comp_to_comm), DomainError);
    CHECK_THROWS_AS(scomm_scomp_convert(1, 0.1, SparsityDirection::comp_to_comm), DomainError);
}

TEST_CASE("pipeline and waiting of one layer") {
    LayerLatency l;
    l.comm = 0.1;
    l.comp = 0.018;
    CHECK(l.pipeline() == 0.1);
    CHECK(l.waiting() == Approx(0.118));
}

TEST_CASE("system presets") {
    const auto presets = system_presets();
    CHECK(presets.size() == 6);
    const SystemConfig t4 = system_preset("t4_pcie");
    CHECK(t4.compute == 6.5e13);
    CHECK(t4.bandwidth == 3.2e10);
    CHECK(system_preset("cortex_m4_wireless").bandwidth == 1.25e5);
    CHECK(system_preset("slow_compute").compute == 3.75e9);
    CHECK(system_preset("dong2022").bandwidth == 37.5e6);
    CHECK_THROWS_AS(system_preset("cray"), DomainError);
    for (const SystemConfig& s : presets) CHECK_NOTHROW(s.validate());
    SystemConfig bad = make_system(0.0, 1.0, 2);
    CHECK_THROWS_AS(bad.validate(), DomainError);
}

TEST_CASE("equilibrium sparsity") {
    const SystemConfig dong = make_system(3.75e7, 1.25e11, 2);
    const LayerSpec l = conv3x3_256();
    const double ops = static_cast<double>(flop_count(l));
    const double bytes = static_cast<double>(feature_bytes(l, 4));
    CHECK(ops == Approx(2.312e8).epsilon(1e-3));
    CHECK(bytes == 200704.0);
    CHECK(a_factor(ops, bytes, dong) == Approx(5.787).epsilon(1e-3));
    const double s = equilibrium_sparsity(ops, bytes, dong);
    CHECK(s == Approx(0.9054).epsilon(1e-4));
    const double lc = comm_latency(bytes, s, dong.bandwidth);
    const double lp = comp_latency(ops, s / 2.0, 2, dong.compute);
    CHECK(std::fabs(lc - lp) / std::max(lc, lp) <= 1e-9);

    // A = 1 exactly: F_s = C_c B / (N C)
    const SystemConfig unit = make_system(1.0, 1.0, 2);
    CHECK(equilibrium_sparsity(2.0, 1.0, unit) == 0.0);
    CHECK(equilibrium_sparsity(2.0, 1e12, unit) == Approx(1.0).epsilon(1e-9));
    try {
        equilibrium_sparsity(4.0, 1.0, unit, 17);
        FAIL("expected ComputeBoundError");
    } catch (const ComputeBoundError& e) {
        CHECK(e.layer_id() == 17);
        CHECK(e.a_factor() == Approx(0.5));
    }
}

TEST_CASE("equilibrium profile flags compute-bound layers") {
    testutil::ModelBuilder b({8, 8, 8});
    for (int k = 0; k < 4; ++k) b.conv(k - 1, 8, 3, 1, 1, true, true);
    const SystemConfig fast_net = make_system(1e15, 1e9, 2);
    const EquilibriumProfile compute_bound = equilibrium_profile(b.model, fast_net);
    for (const auto& e : compute_bound.entries) CHECK_FALSE(e.s_comm.has_value());
    const EquilibriumProfile p = equilibrium_profile(b.model, system_preset("dong2022"));
    REQUIRE(p.entries.size() == 4);
    for (const auto& e : p.entries) CHECK(*e.s_comm == *p.entries[0].s_comm);
    std::ostringstream os;
    write_equilibrium_csv(os, p);
    CHECK(os.str().find("compute_bound") == std::string::npos);
    std::ostringstream os2;
    write_equilibrium_csv(os2, compute_bound);
    CHECK(os2.str().find("compute_bound") != std::string::npos);
}

TEST_CASE("model latency properties") {
    const ModelSpec toy = toy_cnn_shapes();
    const ModelSpec resnet = resnet50_shapes();
    SUBCASE("homogeneity in B, C and N") {
        SystemConfig s = make_system(1e8, 1e11, 2);
        const LatencyReport base = model_latency(resnet, 0.5, s);
        SystemConfig s2 = s;
        s2.bandwidth *= 2;
        CHECK(model_latency(resnet, 0.5, s2).total_comm == Approx(base.total_comm / 2).epsilon(1e-12));
        s2 = s;
        s2.compute *= 2;
        CHECK(model_latency(resnet, 0.5, s2).total_comp == Approx(base.total_comp / 2).epsilon(1e-12));
        // Doubling N at fixed per-layer S_comp halves L_comp.
        std::vector<double> s_comm2(resnet.layers.size(), 0.5), s_comm4(resnet.layers.size());
        for (std::size_t k = 0; k < s_comm4.size(); ++k)
            s_comm4[k] = scomm_scomp_convert(4, scomm_scomp_convert(2, s_comm2[k], SparsityDirection::comm_to_comp),
                                             SparsityDirection::comp_to_comm);
        s2 = s;
        s2.nodes = 4;
        const LatencyReport r2 = model_latency(resnet, s_comm2, s);
        const LatencyReport r4 = model_latency(resnet, s_comm4, s2);
        CHECK(r4.total_comp == Approx(r2.total_comp / 2).epsilon(1e-12));
    }
    SUBCASE("mode ordering and monotonicity") {
        for (const SystemConfig& s : system_presets()) {
            double prev_p = 1e300, prev_w = 1e300;
            for (int k = 0; k <= 20; ++k) {
                const LatencyReport r = model_latency(resnet, k / 20.0, s);
                CHECK(r.total_pipeline <= r.total_waiting);
                CHECK(r.total_pipeline <= prev_p);
                CHECK(r.total_waiting <= prev_w);
                prev_p = r.total_pipeline;
                prev_w = r.total_waiting;
                for (const LayerLatency& l : r.layers) CHECK(l.pipeline() <= l.waiting());
            }
        }
    }
    SUBCASE("weight-free layers carry no traffic") {
        const LatencyReport r = model_latency(toy, 0.0, make_system(1e6, 1e9, 2));
        for (const LayerLatency& l : r.layers)
            if (l.kind == LayerKind::pool || l.kind == LayerKind::elementwise_add) CHECK(l.comm == 0.0);
        CHECK(r.layers[0].comm > 0.0);
        CHECK(r.layers[0].s_comm == 0.0);
    }
    SUBCASE("mask and statistics agree") {
        const SystemConfig s = make_system(5e7, 2e11, 2);
        std::mt19937_64 rng(4);
        for (int trial = 0; trial < 10; ++trial) {
            const ModelSpec m = testutil::random_cnn(rng);
            const BlockMask mask = testutil::random_mask(m, 2, trial / 10.0, trial);
            std::vector<double> per_layer(m.layers.size(), 0.0);
            for (const LayerSparsity& st : sparsity_stats(mask)) per_layer[st.layer_id] = st.s_comm.value();
            const LatencyReport a = model_latency(m, mask, s);
            const LatencyReport b = model_latency(m, per_layer, s);
            CHECK(a.total_pipeline == b.total_pipeline);
            CHECK(a.total_waiting == b.total_waiting);
        }
    }
    SUBCASE("plan latency reduces to the uniform model when dense") {
        for (int n : {2, 4, 8}) {
            const SystemConfig s = make_system(3e7, 1e11, n);
            const BlockMask dense = BlockMask::dense(toy, n);
            const LatencyReport a = model_latency(toy, build_comm_plan(toy, dense), dense, s);
            const LatencyReport b = model_latency(toy, 0.0, s);
            REQUIRE(a.layers.size() == b.layers.size());
            for (std::size_t k = 0; k < a.layers.size(); ++k) {
                CHECK(a.layers[k].comm == Approx(b.layers[k].comm).epsilon(1e-12));
                // the 10-way classifier does not split evenly over 4 or 8 nodes
                if (toy.layers[k].out_features % n == 0)
                    CHECK(a.layers[k].comp == Approx(b.layers[k].comp).epsilon(1e-12));
            }
        }
    }
    SUBCASE("asymmetric plan takes the busiest node") {
        testutil::ModelBuilder b({16, 4, 4});
        b.conv(-1, 16, 1, 1, 0, false, true);
        BlockMask mask = BlockMask::dense(b.model, 2);
        LayerMask& lm = *mask.layer(0);
        for (int f = 0; f < 16; ++f) lm.set_subrow(f, f < 8 ? 1 : 0, false);
        lm.set_subrow(2, 1, true);
        lm.set_subrow(3, 1, true);
        lm.set_subrow(6, 1, true);
        lm.set_subrow(8, 0, true);
        const SystemConfig s = make_system(1.0, 1.0, 2);
        const CommPlan plan = build_comm_plan(b.model, mask);
        const auto loads = node_loads(b.model.layers[0], plan.layers[0], mask, 2, 4);
        CHECK(loads[0].bytes_out == 3 * 16 * 4);
        CHECK(loads[0].bytes_in == 1 * 16 * 4);
        CHECK(loads[1].bytes_out == 1 * 16 * 4);
        CHECK(loads[1].bytes_in == 3 * 16 * 4);
        // node 0: 8 own + 1 received inputs, node 1: 8 + 3
        CHECK(loads[0].ops == 2LL * 8 * 9 * 16);
        CHECK(loads[1].ops == 2LL * 8 * 11 * 16);
        const LatencyReport r = model_latency(b.model, plan, mask, s);
        CHECK(r.layers[0].comm == 4.0 * 16 * 4);
        CHECK(r.layers[0].comp == 2.0 * 8 * 11 * 16);
    }
}

TEST_CASE("latency CSV") {
    const LatencyReport r = model_latency(toy_cnn_shapes(), 0.5, system_preset("dong2022"));
    std::ostringstream os;
    write_latency_csv(os, r);
    std::istringstream is(os.str());
    std::string line;
    std::getline(is, line);
    CHECK(line == "layer_id,kind,C_c,F_s,S_comm,S_comp,L_comm_s,L_comp_s,L_pipeline_s,L_waiting_s");
    int rows = 0;
    while (std::getline(is, line)) ++rows;
    CHECK(rows == static_cast<int>(r.layers.size()) + 1);
    CHECK(format_double(0.1) == "0.1");
    CHECK(format_double(1e-300) == "1e-300");
    CHECK(latency_mode_from_string("waiting") == LatencyMode::waiting);
    CHECK_THROWS_AS(latency_mode_from_string("eager"), FormatError);
}
