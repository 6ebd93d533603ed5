#include <cmath>
#include <filesystem>
#include <limits>

#include "doctest.h"
#include "promptvm/error.hpp"
#include "promptvm/serialize.hpp"
#include "promptvm/verify.hpp"
#include "support.hpp"

using namespace promptvm;

TEST_CASE("doubles round trip bit for bit") {
  std::mt19937_64 rng(1);
  Vector v = test::uniform_vector(rng, 200, -1e3, 1e3);
  v.push_back(0.1);
  v.push_back(-0.0);
  v.push_back(std::numeric_limits<double>::denorm_min());
  v.push_back(std::numeric_limits<double>::max());
  const Vector back = vector_from_json(Json::parse(dump_json(to_json(v))));
  REQUIRE(back.size() == v.size());
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(std::bit_cast<std::uint64_t>(back[i]) == std::bit_cast<std::uint64_t>(v[i]));
  CHECK(parse_double(Json(0.25)) == 0.25);
  CHECK(parse_double(Json("0x1p-2")) == 0.25);
  CHECK_THROWS(parse_double(Json("abc")));
}

TEST_CASE("matrices and networks round trip") {
  std::mt19937_64 rng(2);
  const Matrix m = test::uniform_matrix(rng, 3, 4, -1, 1);
  CHECK(matrix_from_json(to_json(m)) == m);
  Matrix sp(5, 5);
  sp(1, 2) = 3.5;
  sp(4, 0) = -1e-7;
  const SparseMatrix s = SparseMatrix::from_dense(sp);
  CHECK(sparse_from_json(to_json(s)) == s);

  const MlpShapeClass shape{2, 5, 3, 1.25, 2.0};
  CHECK(shape_from_json(to_json(shape)) == shape);
  const ReluMlp n = random_mlp(shape, 4);
  CHECK(mlp_from_json(Json::parse(dump_json(to_json(n)))) == n);

  // plain nested weights are accepted
  const Json plain = {{"format", "promptvm.mlp"},
                      {"layers",
                       {{{"weights", {{1.0}, {-1.0}}}, {"bias", {0.0, 0.0}}},
                        {{"weights", {{1.0, 1.0}}}, {"bias", {0.0}}}}}};
  const ReluMlp absn = mlp_from_json(plain);
  CHECK(mlp_forward(absn, Vector{-0.5}) == 0.5);
}

TEST_CASE("executor artifacts and prompts round trip") {
  RunConfig c;
  c.shape = MlpShapeClass{1, 3, 3, 1.0, 1.0};
  const BuiltExecutor b = build_from_config(c);
  const Json j = artifact_to_json(b.artifact);
  const ExecutorArtifact back = artifact_from_json(Json::parse(dump_json(j, -1)));
  CHECK(back.params == b.artifact.params);
  CHECK(back.shape == b.artifact.shape);
  CHECK(back.plan.temperature == b.artifact.plan.temperature);
  CHECK(back.plan.delta_arith == b.artifact.plan.delta_arith);

  // building twice gives identical bytes
  CHECK(dump_json(artifact_to_json(build_from_config(c).artifact), -1) == dump_json(j, -1));

  const ReluMlp n = random_mlp(c.shape, 3);
  const PromptProgram p = encode_mlp(n, b.geometry.slots, b.codebook);
  const PromptProgram pb = prompt_from_json(Json::parse(dump_json(to_json(p))));
  CHECK(pb.matrix == p.matrix);
  CHECK(pb.layout == p.layout);
  CHECK(pb.address_map == p.address_map);
  CHECK(decode_prompt(pb, b.codebook) == n);

  Json tampered = j;
  tampered["format"] = "something.else";
  CHECK_THROWS(artifact_from_json(tampered));
}

TEST_CASE("file helpers") {
  const auto dir = std::filesystem::temp_directory_path() / "promptvm_serialize_test";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "x.json").string();
  save_json(path, Json{{"a", 1}});
  CHECK(load_json(path)["a"] == 1);
  CHECK_THROWS(load_json((dir / "missing.json").string()));
  write_file(path, "{not json");
  CHECK_THROWS(load_json(path));
  std::filesystem::remove_all(dir);
}
