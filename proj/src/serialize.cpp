// Copyright (C) 2026 The promptvm Authors
// SPDX-License-Identifier: Apache-2.0

#include "promptvm/serialize.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "promptvm/error.hpp"

namespace promptvm {

namespace {

constexpr int kVersion = 1;

void expect_format(const Json& j, const char* format) {
  if (!j.is_object() || !j.contains("format") || j.at("format") != format)
    throw InvalidArgument(std::string("expected a '") + format + "' document");
  if (j.value("version", kVersion) != kVersion)
    throw InvalidArgument(std::string(format) + ": unsupported version");
}

Json header(const char* format) { return Json{{"format", format}, {"version", kVersion}}; }

std::size_t get_size(const Json& j, const char* key) { return j.at(key).get<std::size_t>(); }

}  // namespace

std::string hex_double(double v) {
  if (!std::isfinite(v)) throw InvalidArgument("cannot serialize a non-finite value");
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

double parse_double(const Json& j) {
  if (j.is_number()) return j.get<double>();
  if (!j.is_string()) throw InvalidArgument("expected a number or hex-float string");
  const std::string s = j.get<std::string>();
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0' || !std::isfinite(v))
    throw InvalidArgument("malformed number '" + s + "'");
  return v;
}

Json to_json(const Vector& v) {
  Json a = Json::array();
  for (double x : v) a.push_back(hex_double(x));
  return a;
}

Vector vector_from_json(const Json& j) {
  if (!j.is_array()) throw InvalidArgument("expected an array of numbers");
  Vector v;
  v.reserve(j.size());
  for (const auto& e : j) v.push_back(parse_double(e));
  return v;
}

Json to_json(const Matrix& m) {
  return Json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", to_json(m.data())}};
}

Matrix matrix_from_json(const Json& j) {
  const std::size_t r = get_size(j, "rows"), c = get_size(j, "cols");
  const Vector data = vector_from_json(j.at("data"));
  if (data.size() != r * c) throw InvalidArgument("matrix data length does not match its shape");
  Matrix m(r, c);
  std::copy(data.begin(), data.end(), m.data().begin());
  return m;
}

Json to_json(const SparseMatrix& m) {
  Json rows = Json::array(), cols = Json::array(), vals = Json::array();
  for (const auto& t : m.triplets()) {
    rows.push_back(t.row);
    cols.push_back(t.col);
    vals.push_back(hex_double(t.value));
  }
  return Json{{"rows", m.rows()}, {"cols", m.cols()}, {"i", rows}, {"j", cols}, {"v", vals}};
}

SparseMatrix sparse_from_json(const Json& j) {
  const std::size_t r = get_size(j, "rows"), c = get_size(j, "cols");
  const Json &ri = j.at("i"), &ci = j.at("j"), &vi = j.at("v");
  if (ri.size() != ci.size() || ri.size() != vi.size())
    throw InvalidArgument("sparse matrix triplet arrays differ in length");
  std::vector<Triplet> t;
  t.reserve(ri.size());
  for (std::size_t k = 0; k < ri.size(); ++k)
    t.push_back({ri[k].get<std::size_t>(), ci[k].get<std::size_t>(), parse_double(vi[k])});
  return SparseMatrix::from_triplets(r, c, t);
}

Json to_json(const MlpShapeClass& s) {
  return Json{{"input_dim", s.input_dim},
              {"hidden_width", s.hidden_width},
              {"depth", s.depth},
              {"param_bound", hex_double(s.param_bound)},
              {"domain_radius", hex_double(s.domain_radius)}};
}

MlpShapeClass shape_from_json(const Json& j) {
  MlpShapeClass s;
  s.input_dim = get_size(j, "input_dim");
  s.hidden_width = get_size(j, "hidden_width");
  s.depth = j.value("depth", std::size_t{3});
  s.param_bound = parse_double(j.at("param_bound"));
  s.domain_radius = j.contains("domain_radius") ? parse_double(j.at("domain_radius")) : 1.0;
  s.validate();
  return s;
}

Json to_json(const SlotLayout& s) {
  return Json{{"total_slots", s.total_slots}, {"unit_capacity", s.unit_capacity},
              {"bias_slot", s.bias_slot},     {"null_slot", s.null_slot},
              {"param_slots", s.param_slots}, {"work_slots", s.work_slots},
              {"key_dim", s.key_dim},         {"value_offset", s.value_offset},
              {"value_dim", s.value_dim},     {"model_width", s.model_width}};
}

SlotLayout slot_layout_from_json(const Json& j) {
  SlotLayout s;
  s.total_slots = get_size(j, "total_slots");
  s.unit_capacity = get_size(j, "unit_capacity");
  s.bias_slot = get_size(j, "bias_slot");
  s.null_slot = get_size(j, "null_slot");
  s.param_slots = j.at("param_slots").get<std::vector<std::size_t>>();
  s.work_slots = j.at("work_slots").get<std::vector<std::size_t>>();
  s.key_dim = get_size(j, "key_dim");
  s.value_offset = get_size(j, "value_offset");
  s.value_dim = get_size(j, "value_dim");
  s.model_width = get_size(j, "model_width");
  s.validate();
  return s;
}

Json to_json(const RegisterLayout& r) {
  Json j{{"model_width", r.model_width}};
  for (const auto& [name, range] : r.named()) j[name] = Json{{"begin", range.begin}, {"size", range.size}};
  return j;
}

Json to_json(const BudgetPlan& p) {
  return Json{{"epsilon_total", hex_double(p.epsilon_total)},
              {"epsilon_approx", hex_double(p.epsilon_approx)},
              {"epsilon_exec", hex_double(p.epsilon_exec)},
              {"delta_route", to_json(p.delta_route)},
              {"delta_arith", to_json(p.delta_arith)},
              {"lipschitz", to_json(p.lipschitz)},
              {"state_lipschitz", to_json(p.state_lipschitz)},
              {"realized_arith", to_json(p.realized_arith)},
              {"readout_constant", hex_double(p.readout_constant)},
              {"temperature", hex_double(p.temperature)},
              {"margin", hex_double(p.margin)},
              {"query_scale", hex_double(p.query_scale)},
              {"impurity", hex_double(p.impurity)},
              {"read_knots", p.read_knots},
              {"mulacc_knots", p.mulacc_knots},
              {"read_box_w", hex_double(p.read_box_w)},
              {"read_box_x", hex_double(p.read_box_x)},
              {"mulacc_box_a", hex_double(p.mulacc_box_a)},
              {"mulacc_box_h", hex_double(p.mulacc_box_h)},
              {"read_product_error", hex_double(p.read_product_error)},
              {"mulacc_product_error", hex_double(p.mulacc_product_error)},
              {"value_bound", hex_double(p.value_bound)},
              {"preact_bound", hex_double(p.preact_bound)},
              {"acc_bound", hex_double(p.acc_bound)},
              {"box_bound", hex_double(p.box_bound)},
              {"total_slots", p.total_slots},
              {"num_tokens", p.num_tokens},
              {"model_width", p.model_width},
              {"num_blocks", p.num_blocks}};
}

BudgetPlan plan_from_json(const Json& j) {
  BudgetPlan p;
  auto d = [&](const char* k) { return parse_double(j.at(k)); };
  p.epsilon_total = d("epsilon_total");
  p.epsilon_approx = d("epsilon_approx");
  p.epsilon_exec = d("epsilon_exec");
  p.delta_route = vector_from_json(j.at("delta_route"));
  p.delta_arith = vector_from_json(j.at("delta_arith"));
  p.lipschitz = vector_from_json(j.at("lipschitz"));
  p.state_lipschitz = vector_from_json(j.at("state_lipschitz"));
  p.realized_arith = vector_from_json(j.at("realized_arith"));
  p.readout_constant = d("readout_constant");
  p.temperature = d("temperature");
  p.margin = d("margin");
  p.query_scale = d("query_scale");
  p.impurity = d("impurity");
  p.read_knots = get_size(j, "read_knots");
  p.mulacc_knots = get_size(j, "mulacc_knots");
  p.read_box_w = d("read_box_w");
  p.read_box_x = d("read_box_x");
  p.mulacc_box_a = d("mulacc_box_a");
  p.mulacc_box_h = d("mulacc_box_h");
  p.read_product_error = d("read_product_error");
  p.mulacc_product_error = d("mulacc_product_error");
  p.value_bound = d("value_bound");
  p.preact_bound = d("preact_bound");
  p.acc_bound = d("acc_bound");
  p.box_bound = d("box_bound");
  p.total_slots = get_size(j, "total_slots");
  p.num_tokens = get_size(j, "num_tokens");
  p.model_width = get_size(j, "model_width");
  p.num_blocks = get_size(j, "num_blocks");
  p.validate();
  return p;
}

Json to_json(const ReluMlp& mlp) {
  Json j = header("promptvm.mlp");
  Json layers = Json::array();
  for (const auto& l : mlp.layers()) layers.push_back({{"weights", to_json(l.weights)}, {"bias", to_json(l.bias)}});
  j["layers"] = layers;
  j["param_bound"] = hex_double(mlp.param_bound());
  return j;
}

// Hand-written files may give weights as nested row arrays of plain numbers.
ReluMlp mlp_from_json(const Json& j) {
  expect_format(j, "promptvm.mlp");
  std::vector<MlpLayer> layers;
  for (const auto& l : j.at("layers")) {
    const Json& w = l.at("weights");
    Matrix m;
    if (w.is_array()) {
      const std::size_t rows = w.size(), cols = rows ? w[0].size() : 0;
      m = Matrix(rows, cols);
      for (std::size_t r = 0; r < rows; ++r) {
        if (w[r].size() != cols) throw InvalidArgument("mlp: ragged weight rows");
        for (std::size_t c = 0; c < cols; ++c) m(r, c) = parse_double(w[r][c]);
      }
    } else {
      m = matrix_from_json(w);
    }
    layers.push_back({std::move(m), vector_from_json(l.at("bias"))});
  }
  std::optional<double> bound;
  if (j.contains("param_bound")) bound = parse_double(j.at("param_bound"));
  return ReluMlp(std::move(layers), bound);
}

namespace {

Json block_to_json(const BlockWeights& b) {
  return Json{{"wq", to_json(b.wq)},         {"wk", to_json(b.wk)},       {"wv", to_json(b.wv)},
              {"ffn_w1", to_json(b.ffn_w1)}, {"ffn_b1", to_json(b.ffn_b1)},
              {"ffn_w2", to_json(b.ffn_w2)}, {"ffn_b2", to_json(b.ffn_b2)}};
}

BlockWeights block_from_json(const Json& j) {
  BlockWeights b;
  b.wq = sparse_from_json(j.at("wq"));
  b.wk = sparse_from_json(j.at("wk"));
  b.wv = sparse_from_json(j.at("wv"));
  b.ffn_w1 = sparse_from_json(j.at("ffn_w1"));
  b.ffn_b1 = vector_from_json(j.at("ffn_b1"));
  b.ffn_w2 = sparse_from_json(j.at("ffn_w2"));
  b.ffn_b2 = vector_from_json(j.at("ffn_b2"));
  return b;
}

}  // namespace

Json to_json(const ExecutorParams& p) {
  const auto& f = p.fields();
  Json blocks = Json::array();
  for (const auto& b : f.blocks) blocks.push_back(block_to_json(b));
  return Json{{"blocks", blocks},
              {"input_embed", to_json(f.input_embed)},
              {"input_bias", to_json(f.input_bias)},
              {"initial_output", to_json(f.initial_output)},
              {"initial_work", to_json(f.initial_work)},
              {"readout", to_json(f.readout)},
              {"readout_bias", hex_double(f.readout_bias)},
              {"temperature", hex_double(f.temperature)},
              {"model_width", f.model_width},
              {"prompt_len", f.prompt_len},
              {"domain_radius", hex_double(f.domain_radius)}};
}

ExecutorParams executor_from_json(const Json& j) {
  ExecutorParams::Fields f;
  for (const auto& b : j.at("blocks")) f.blocks.push_back(block_from_json(b));
  f.input_embed = matrix_from_json(j.at("input_embed"));
  f.input_bias = vector_from_json(j.at("input_bias"));
  f.initial_output = vector_from_json(j.at("initial_output"));
  f.initial_work = vector_from_json(j.at("initial_work"));
  f.readout = vector_from_json(j.at("readout"));
  f.readout_bias = parse_double(j.at("readout_bias"));
  f.temperature = parse_double(j.at("temperature"));
  f.model_width = get_size(j, "model_width");
  f.prompt_len = get_size(j, "prompt_len");
  f.domain_radius = parse_double(j.at("domain_radius"));
  return ExecutorParams(std::move(f));
}

Json artifact_to_json(const ExecutorArtifact& a) {
  Json j = header("promptvm.executor");
  j["shape"] = to_json(a.shape);
  j["plan"] = to_json(a.plan);
  j["params"] = to_json(a.params);
  return j;
}

ExecutorArtifact artifact_from_json(const Json& j) {
  expect_format(j, "promptvm.executor");
  return {shape_from_json(j.at("shape")), plan_from_json(j.at("plan")), executor_from_json(j.at("params"))};
}

namespace {

const char* kind_name(RecordLabel::Kind k) {
  switch (k) {
    case RecordLabel::Kind::Unit: return "unit";
    case RecordLabel::Kind::OutputBias: return "output_bias";
    case RecordLabel::Kind::Null: return "null";
  }
  return "?";
}

RecordLabel::Kind kind_from(const std::string& s) {
  if (s == "unit") return RecordLabel::Kind::Unit;
  if (s == "output_bias") return RecordLabel::Kind::OutputBias;
  if (s == "null") return RecordLabel::Kind::Null;
  throw InvalidArgument("unknown record kind '" + s + "'");
}

}  // namespace

Json to_json(const PromptProgram& p) {
  Json j = header("promptvm.prompt");
  Json map = Json::array();
  for (const auto& e : p.address_map)
    map.push_back({{"kind", kind_name(e.label.kind)}, {"unit", e.label.unit}, {"slot", e.slot}});
  j["address_map"] = map;
  j["layout"] = to_json(p.layout);
  j["source_shape"] = to_json(p.source_shape);
  j["value_bound"] = hex_double(p.value_bound);
  j["matrix"] = to_json(p.matrix);
  return j;
}

PromptProgram prompt_from_json(const Json& j) {
  expect_format(j, "promptvm.prompt");
  PromptProgram p;
  for (const auto& e : j.at("address_map"))
    p.address_map.push_back({{kind_from(e.at("kind").get<std::string>()), get_size(e, "unit")},
                             get_size(e, "slot")});
  p.layout = slot_layout_from_json(j.at("layout"));
  p.source_shape = shape_from_json(j.at("source_shape"));
  p.value_bound = parse_double(j.at("value_bound"));
  p.matrix = matrix_from_json(j.at("matrix"));
  if (p.matrix.rows() != p.layout.total_slots || p.matrix.cols() != p.layout.model_width)
    throw InvalidArgument("prompt matrix does not match its layout");
  return p;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidArgument("cannot write '" + path + "'");
  out << content;
  if (!out) throw InvalidArgument("write to '" + path + "' failed");
}

Json load_json(const std::string& path) {
  try {
    return Json::parse(read_file(path));
  } catch (const Json::parse_error& e) {
    throw InvalidArgument("'" + path + "' is not valid JSON: " + e.what());
  }
}

std::string dump_json(const Json& j, int indent) { return j.dump(indent) + "\n"; }

void save_json(const std::string& path, const Json& j, int indent) {
  write_file(path, dump_json(j, indent));
}

}  // namespace promptvm
