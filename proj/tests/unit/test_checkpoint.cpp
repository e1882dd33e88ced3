#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "t2t/checkpoint.hpp"

using namespace t2t;

namespace {

ModelConfig tiny() {
    ModelConfig c;
    c.dim = 16;
    c.heads = 2;
    c.depth = 1;
    c.lora_rank = 2;
    c.lora_alpha = 4.0;
    return c;
}

Checkpoint sample_checkpoint() {
    const DiT<float> model(tiny());
    Checkpoint c;
    c.kind = "model";
    c.config = model.config();
    c.state = {{"epoch", 3}, {"note", "x"}};
    append_params(c, model.init_params(5, true));
    return c;
}

}  // namespace

TEST_CASE("checkpoint serialization round trips byte for byte") {
    const Checkpoint c = sample_checkpoint();
    const auto bytes = serialize_checkpoint(c);
    const Checkpoint back = deserialize_checkpoint(bytes);
    CHECK(back.kind == c.kind);
    CHECK(back.config == c.config);
    CHECK(back.state == c.state);
    CHECK(back.arrays == c.arrays);
    CHECK(serialize_checkpoint(back) == bytes);
}

TEST_CASE("corrupted checkpoints are rejected") {
    const auto bytes = serialize_checkpoint(sample_checkpoint());
    auto flipped = bytes;
    flipped[flipped.size() - 5] ^= 0x40;
    CHECK_THROWS_AS(deserialize_checkpoint(flipped), CheckpointError);

    auto truncated = bytes;
    truncated.resize(bytes.size() - 4);
    CHECK_THROWS_AS(deserialize_checkpoint(truncated), CheckpointError);

    auto trailing = bytes;
    trailing.push_back(0);
    CHECK_THROWS_AS(deserialize_checkpoint(trailing), CheckpointError);

    auto magic = bytes;
    magic[0] = 'X';
    CHECK_THROWS_AS(deserialize_checkpoint(magic), CheckpointError);

    CHECK_THROWS_AS(deserialize_checkpoint(std::vector<std::uint8_t>(6, 0)), CheckpointError);
}

TEST_CASE("checkpoint files and parameter extraction") {
    const auto path = std::filesystem::temp_directory_path() / "t2t_ckpt_test.ckpt";
    const Checkpoint c = sample_checkpoint();
    save_checkpoint(path, c);
    const Checkpoint back = load_checkpoint(path);
    CHECK(back.arrays == c.arrays);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);

    const DiT<float> model(tiny());
    const auto params = extract_params(back, model.layout());
    CHECK(params.values == model.init_params(5, true).values);

    ModelConfig other = tiny();
    other.dim = 32;
    const DiT<float> bigger(other);
    CHECK_THROWS_AS(extract_params(back, bigger.layout()), CheckpointError);
}

TEST_CASE("model config survives json") {
    ModelConfig c = tiny();
    c.lora_alpha = 3.5;
    CHECK(config_from_json(config_to_json(c)) == c);
}
