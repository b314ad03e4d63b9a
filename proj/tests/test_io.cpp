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

#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "helpers.hpp"
#include "sparsecomm/io.hpp"

using namespace sparsecomm;

TEST_CASE("model manifest round trip") {
    for (const ModelSpec& m : {resnet50_shapes(), toy_cnn_shapes()}) {
        const ModelSpec back = io::model_from_json(io::model_to_json(m));
        CHECK(io::model_to_json(back) == io::model_to_json(m));
        REQUIRE(back.layers.size() == m.layers.size());
        for (std::size_t k = 0; k < m.layers.size(); ++k) {
            CHECK(back.layers[k].residual_from == m.layers[k].residual_from);
            CHECK(back.layers[k].input_from == m.layers[k].input_from);
            CHECK(back.layers[k].relu == m.layers[k].relu);
            CHECK(back.layers[k].sparsifiable == m.layers[k].sparsifiable);
        }
        CHECK(back.input == m.input);
    }
    const auto dir = testutil::temp_dir("io_model");
    io::save_model(dir / "toy.json", toy_cnn_shapes());
    CHECK(io::model_to_json(io::resolve_model((dir / "toy.json").string())) == io::model_to_json(toy_cnn_shapes()));
    CHECK(io::resolve_model("builtin:resnet50").layers.size() == resnet50_shapes().layers.size());
    CHECK_THROWS_AS(io::resolve_model("builtin:vgg"), FormatError);
}

TEST_CASE("malformed manifests") {
    CHECK_THROWS_AS(io::model_from_json("{"), FormatError);
    CHECK_THROWS_AS(io::model_from_json("[]"), FormatError);
    CHECK_THROWS_AS(io::model_from_json(R"({"name":"x"})"), FormatError);
    std::string text = io::model_to_json(toy_cnn_shapes());
    const auto pos = text.find("\"conv2d\"");
    REQUIRE(pos != std::string::npos);
    text.replace(pos, 8, "\"conv9d\"");
    CHECK_THROWS_AS(io::model_from_json(text), FormatError);
}

TEST_CASE("weights round trip") {
    const ModelSpec m = toy_cnn_shapes();
    const WeightStore w = WeightStore::random(m, 3);
    std::stringstream ss;
    io::write_weights(ss, w);
    const std::string bytes = ss.str();
    CHECK(bytes.substr(0, 8) == "DISCOWT1");
    std::istringstream in(bytes);
    CHECK(io::read_weights(in, m) == w);

    std::istringstream truncated(bytes.substr(0, bytes.size() - 3));
    CHECK_THROWS_AS(io::read_weights(truncated, m), FormatError);
    std::istringstream trailing(bytes + "x");
    CHECK_THROWS_AS(io::read_weights(trailing, m), FormatError);
    std::string bad_magic = bytes;
    bad_magic[0] = 'X';
    std::istringstream magic(bad_magic);
    CHECK_THROWS_AS(io::read_weights(magic, m), FormatError);
    std::istringstream other(bytes);
    CHECK_THROWS_AS(io::read_weights(other, resnet50_shapes()), FormatError);

    const auto dir = testutil::temp_dir("io_weights");
    io::save_weights(dir / "w.bin", w);
    CHECK(io::load_weights(dir / "w.bin", m) == w);
    CHECK_THROWS_AS(io::load_weights(dir / "missing.bin", m), FormatError);
}

TEST_CASE("mask and plan round trips") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 8; ++trial) {
        const ModelSpec m = testutil::random_cnn(rng);
        const BlockMask mask = testutil::random_mask(m, 2 << (trial % 3), 0.4, trial);
        CHECK(io::mask_from_json(io::mask_to_json(mask), m) == mask);
        const CommPlan plan = build_comm_plan(m, mask);
        CHECK(io::plan_from_json(io::plan_to_json(plan)) == plan);
    }
    const ModelSpec toy = toy_cnn_shapes();
    const auto dir = testutil::temp_dir("io_mask");
    const BlockMask ind = pattern_independent(toy, 2);
    io::save_mask(dir / "m.json", ind);
    CHECK(io::load_mask(dir / "m.json", toy) == ind);
}

TEST_CASE("malformed masks") {
    const ModelSpec toy = toy_cnn_shapes();
    const std::string good = io::mask_to_json(BlockMask::dense(toy, 2));
    CHECK_THROWS_AS(io::mask_from_json("not json", toy), FormatError);
    CHECK_THROWS_AS(io::mask_from_json(R"({"nodes":2})", toy), FormatError);
    CHECK_THROWS_AS(io::mask_from_json(good, resnet50_shapes()), FormatError);
    const nlohmann::json parsed = nlohmann::json::parse(good);
    REQUIRE(parsed["layers"][0]["blocks"][0]["features"].size() == 4);
    // a feature node 0 does not own
    nlohmann::json wrong = parsed;
    wrong["layers"][0]["blocks"][0]["features"][3] = 5;
    CHECK_THROWS_AS(io::mask_from_json(wrong.dump(), toy), FormatError);
    nlohmann::json unsorted = parsed;
    unsorted["layers"][0]["blocks"][0]["features"] = {1, 0, 2, 3};
    CHECK_THROWS_AS(io::mask_from_json(unsorted.dump(), toy), FormatError);
    nlohmann::json missing = parsed;
    missing["layers"][0]["blocks"].erase(1);
    CHECK_THROWS_AS(io::mask_from_json(missing.dump(), toy), FormatError);
    CHECK_THROWS_AS(io::plan_from_json(R"({"nodes":"two","layers":[]})"), FormatError);
}

TEST_CASE("system config") {
    for (const SystemConfig& s : system_presets()) {
        const SystemConfig back = io::system_from_json(io::system_to_json(s));
        CHECK(back.name == s.name);
        CHECK(back.bandwidth == s.bandwidth);
        CHECK(back.compute == s.compute);
        CHECK(back.nodes == s.nodes);
        CHECK(back.mode == s.mode);
    }
    CHECK(io::resolve_system("t4_pcie").compute == 65e12);
    CHECK_THROWS_AS(io::system_from_json(R"({"name":"x","bandwidth":-1,"compute":1,"nodes":2})"), Error);
    CHECK_THROWS_AS(io::system_from_json(R"({"name":"x","bandwidth":1,"compute":1,"nodes":2,"mode":"eager"})"),
                    FormatError);
}

TEST_CASE("train config") {
    TrainConfig c;
    c.seed = 42;
    c.schedule = {{0.3, 2}, {1.0, 1}};
    c.strategy = SelectStrategy::random;
    c.one_shot = true;
    const TrainConfig back = io::train_config_from_json(io::train_config_to_json(c));
    CHECK(back.seed == 42);
    CHECK(back.schedule.size() == 2);
    CHECK(back.schedule[1].p == 1.0);
    CHECK(back.strategy == SelectStrategy::random);
    CHECK(back.one_shot);
    CHECK(back.lr == c.lr);
    CHECK_THROWS_AS(io::train_config_from_json(R"({"learning_rate":0.1})"), FormatError);
    CHECK_THROWS_AS(io::train_config_from_json(R"({"schedule":[{"p":0.9,"epochs":1},{"p":0.5,"epochs":1}]})"),
                    Error);
}

TEST_CASE("tensor files") {
    const auto dir = testutil::temp_dir("io_tensor");
    const Tensor t = testutil::random_tensor({3, 4, 5}, 1);
    io::save_tensor(dir / "t.bin", t);
    CHECK(io::read_text(dir / "t.bin.shape") == "3 4 5\n");
    CHECK(std::filesystem::file_size(dir / "t.bin") == 3 * 4 * 5 * 4);
    const Tensor back = io::load_tensor(dir / "t.bin");
    CHECK(back.shape == t.shape);
    CHECK(back.data == t.data);
    io::write_text(dir / "bad.bin.shape", "3 4\n");
    io::write_text(dir / "bad.bin", std::string(48, '\0'));
    CHECK_THROWS_AS(io::load_tensor(dir / "bad.bin"), FormatError);
    io::write_text(dir / "short.bin.shape", "3 4 5\n");
    io::write_text(dir / "short.bin", std::string(12, '\0'));
    CHECK_THROWS_AS(io::load_tensor(dir / "short.bin"), FormatError);
}
