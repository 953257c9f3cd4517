#include <doctest.h>

#include <fstream>

#include "clh/checkpoint.hpp"
#include "clh/common.hpp"
#include "support.hpp"

using namespace clh;

namespace {

Checkpoint sample_checkpoint() {
  Checkpoint c;
  c.model = ModelState(ModelConfig{}, 42);
  c.model.add_head("hi");
  c.model.add_head("ta");
  c.model.add_adapter("ta");
  c.model.params().at("adapter.ta.up.w")(1, 2) = -0.125;
  c.opt.lr = 5e-4;
  c.opt.step = 17;
  c.opt.slots["enc.0.w"] = {Matrix::Constant(16, 32, 0.5), Matrix::Constant(16, 32, 0.25), 9};
  c.strategy.anchor = c.model.params();
  c.strategy.fisher = {{"enc.0.b", Matrix::Constant(1, 32, 1e-300)}};
  c.strategy.importance = {{"head.hi.b", Matrix::Constant(1, 16, 3.0)}};
  c.strategy.replay_buffer = {{3, 99}, {0, 1}};
  c.strategy.buffer_growth = {2};
  c.strategy.seen_languages = {"hi", "ta"};
  return c;
}

}  // namespace

TEST_CASE("checkpoint encode/decode is bit-exact") {
  const auto c = sample_checkpoint();
  const auto bytes = encode_checkpoint(c);
  const auto back = decode_checkpoint(bytes);
  CHECK(back == c);
  CHECK(encode_checkpoint(back) == bytes);
}

TEST_CASE("checkpoint files round-trip") {
  test::TempDir dir;
  const auto c = sample_checkpoint();
  save_checkpoint(c, dir / "x.ckpt");
  CHECK(load_checkpoint(dir / "x.ckpt") == c);
}

TEST_CASE("corrupted or truncated checkpoints are rejected") {
  const auto bytes = encode_checkpoint(sample_checkpoint());
  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x01;
  CHECK_THROWS_AS(decode_checkpoint(flipped), RuntimeFailure);
  CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), RuntimeFailure);
  CHECK_THROWS_AS(decode_checkpoint(bytes + "x"), RuntimeFailure);
  CHECK_THROWS_AS(decode_checkpoint("not a checkpoint"), RuntimeFailure);
  CHECK_THROWS_AS(decode_checkpoint(""), RuntimeFailure);
}

TEST_CASE("atomic writes replace whole files") {
  test::TempDir dir;
  write_file_atomic(dir / "sub" / "f.txt", "first");
  write_file_atomic(dir / "sub" / "f.txt", "second");
  CHECK(read_file(dir / "sub" / "f.txt") == "second");
  CHECK_THROWS(read_file(dir / "missing"));
}
