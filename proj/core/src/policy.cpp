#include "asal/policy.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "asal/serialize.hpp"

namespace asal::policy {

namespace {

using tape::Tape;
using tape::Var;

constexpr char kMagic[] = "ASALPOL1";
constexpr std::uint32_t kVersion = 1;
// Activations inside the multilayer maps; recorded in checkpoints so saved
// policies are unambiguous about the nonlinearity they were trained with.
constexpr char kActivation[] = "gelu-erf";

struct LayerIdx {
  int wq, bq, wk, bk, wv, bv, wo, bo;
  int ln1_g, ln1_b;
  int ff_w1, ff_b1, ff_w2, ff_b2;
  int ln2_g, ln2_b;
};

struct BranchIdx {
  int embed_w1, embed_b1, embed_w2, embed_b2;
  std::vector<LayerIdx> layers;
};

struct Schema {
  std::vector<TensorSpec> specs;
  BranchIdx task;
  std::optional<BranchIdx> safety;
  int budget_w1 = -1, budget_b1 = -1, budget_w2 = -1, budget_b2 = -1;
  int dec_w1 = -1, dec_b1 = -1, dec_w2 = -1, dec_b2 = -1;
};

Schema build_schema(const PolicyConfig& c) {
  c.validate();
  Schema s;
  int n = 0;
  auto push = [&s, &n](std::string name, int rows, int cols,
                       TensorSpec::Init init) {
    s.specs.push_back({std::move(name), rows, cols, init});
    return n++;
  };
  auto push_branch = [&](const std::string& prefix) {
    BranchIdx b;
    b.embed_w1 = push(prefix + ".embed.w1", c.dim + 1, c.hidden,
                      TensorSpec::Init::kFanInUniform);
    b.embed_b1 =
        push(prefix + ".embed.b1", 1, c.hidden, TensorSpec::Init::kZero);
    b.embed_w2 = push(prefix + ".embed.w2", c.hidden, c.embed_dim,
                      TensorSpec::Init::kFanInUniform);
    b.embed_b2 =
        push(prefix + ".embed.b2", 1, c.embed_dim, TensorSpec::Init::kZero);
    if (c.mode == PolicyConfig::Mode::kAttention) {
      for (int l = 0; l < c.encoder_layers; ++l) {
        const std::string p = prefix + ".enc" + std::to_string(l);
        LayerIdx li;
        li.wq = push(p + ".wq", c.embed_dim, c.embed_dim,
                     TensorSpec::Init::kFanInUniform);
        li.bq = push(p + ".bq", 1, c.embed_dim, TensorSpec::Init::kZero);
        li.wk = push(p + ".wk", c.embed_dim, c.embed_dim,
                     TensorSpec::Init::kFanInUniform);
        li.bk = push(p + ".bk", 1, c.embed_dim, TensorSpec::Init::kZero);
        li.wv = push(p + ".wv", c.embed_dim, c.embed_dim,
                     TensorSpec::Init::kFanInUniform);
        li.bv = push(p + ".bv", 1, c.embed_dim, TensorSpec::Init::kZero);
        li.wo = push(p + ".wo", c.embed_dim, c.embed_dim,
                     TensorSpec::Init::kFanInUniform);
        li.bo = push(p + ".bo", 1, c.embed_dim, TensorSpec::Init::kZero);
        li.ln1_g = push(p + ".ln1.g", 1, c.embed_dim, TensorSpec::Init::kOne);
        li.ln1_b = push(p + ".ln1.b", 1, c.embed_dim, TensorSpec::Init::kZero);
        li.ff_w1 = push(p + ".ff.w1", c.embed_dim, c.hidden,
                        TensorSpec::Init::kFanInUniform);
        li.ff_b1 = push(p + ".ff.b1", 1, c.hidden, TensorSpec::Init::kZero);
        li.ff_w2 = push(p + ".ff.w2", c.hidden, c.embed_dim,
                        TensorSpec::Init::kFanInUniform);
        li.ff_b2 =
            push(p + ".ff.b2", 1, c.embed_dim, TensorSpec::Init::kZero);
        li.ln2_g = push(p + ".ln2.g", 1, c.embed_dim, TensorSpec::Init::kOne);
        li.ln2_b = push(p + ".ln2.b", 1, c.embed_dim, TensorSpec::Init::kZero);
        b.layers.push_back(li);
      }
    }
    return b;
  };

  s.task = push_branch("task");
  if (c.has_safety_branch) s.safety = push_branch("safety");
  if (c.has_budget_input) {
    s.budget_w1 =
        push("budget.w1", 1, c.hidden, TensorSpec::Init::kFanInUniform);
    s.budget_b1 = push("budget.b1", 1, c.hidden, TensorSpec::Init::kZero);
    s.budget_w2 = push("budget.w2", c.hidden, c.embed_dim,
                       TensorSpec::Init::kFanInUniform);
    s.budget_b2 =
        push("budget.b2", 1, c.embed_dim, TensorSpec::Init::kZero);
  }
  const int branches =
      1 + (c.has_safety_branch ? 1 : 0) + (c.has_budget_input ? 1 : 0);
  s.dec_w1 = push("decision.w1", branches * c.embed_dim, c.hidden,
                  TensorSpec::Init::kFanInUniform);
  s.dec_b1 = push("decision.b1", 1, c.hidden, TensorSpec::Init::kZero);
  s.dec_w2 =
      push("decision.w2", c.hidden, c.dim, TensorSpec::Init::kFanInUniform);
  s.dec_b2 = push("decision.b2", 1, c.dim, TensorSpec::Init::kZero);
  return s;
}

Var mlp2(Tape& t, Var x, Var w1, Var b1, Var w2, Var b2) {
  using namespace tape;
  const Var h = gelu(t, add_rowvec(t, matmul(t, x, w1), b1));
  return add_rowvec(t, matmul(t, h, w2), b2);
}

// One post-norm encoder layer: x <- LN(x + MHA(x)); x <- LN(x + FF(x)).
// The attention mix over history rows uses order-canonical reductions so
// that permuting the rows permutes intermediate rows without changing any
// value bit.
Var encoder_layer(Tape& t, const PolicyConfig& c, const std::vector<Var>& p,
                  const LayerIdx& li, Var e) {
  using namespace tape;
  const int n = static_cast<int>(t.value(e).rows());
  const Var q = add_rowvec(t, matmul(t, e, p[li.wq]), p[li.bq]);
  const Var k = add_rowvec(t, matmul(t, e, p[li.wk]), p[li.bk]);
  const Var v = add_rowvec(t, matmul(t, e, p[li.wv]), p[li.bv]);
  std::vector<Var> mixed;
  mixed.reserve(c.heads());
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(c.head_dim));
  for (int h = 0; h < c.heads(); ++h) {
    const int off = h * c.head_dim;
    const Var qh = block(t, q, 0, off, n, c.head_dim);
    const Var kh = block(t, k, 0, off, n, c.head_dim);
    const Var vh = block(t, v, 0, off, n, c.head_dim);
    const Var scores = scale(t, matmul_nt(t, qh, kh), inv_sqrt_d);
    const Var attn = softmax_rows(t, scores);
    mixed.push_back(matmul_ordered(t, attn, vh));
  }
  const Var mha =
      add_rowvec(t, matmul(t, concat_cols(t, mixed), p[li.wo]), p[li.bo]);
  e = layer_norm_rows(t, add(t, e, mha), p[li.ln1_g], p[li.ln1_b]);
  const Var ff =
      mlp2(t, e, p[li.ff_w1], p[li.ff_b1], p[li.ff_w2], p[li.ff_b2]);
  return layer_norm_rows(t, add(t, e, ff), p[li.ln2_g], p[li.ln2_b]);
}

Var encode_branch(Tape& t, const PolicyConfig& c, const std::vector<Var>& p,
                  const BranchIdx& b, Var history) {
  using namespace tape;
  Var e = mlp2(t, history, p[b.embed_w1], p[b.embed_b1], p[b.embed_w2],
               p[b.embed_b2]);
  if (c.mode == PolicyConfig::Mode::kAttention) {
    for (const LayerIdx& li : b.layers) e = encoder_layer(t, c, p, li, e);
  }
  return sum_pooled_rows(t, e);
}

}  // namespace

void PolicyConfig::validate() const {
  if (dim < 1) throw std::invalid_argument("policy: dim must be >= 1");
  if (embed_dim < 1 || hidden < 1) {
    throw std::invalid_argument("policy: sizes must be positive");
  }
  if (mode == Mode::kAttention) {
    if (head_dim < 1 || embed_dim % head_dim != 0) {
      throw std::invalid_argument(
          "policy: embed_dim must be a multiple of head_dim");
    }
    if (encoder_layers < 1) {
      throw std::invalid_argument("policy: encoder_layers must be >= 1");
    }
  }
}

std::vector<TensorSpec> layout(const PolicyConfig& config) {
  return build_schema(config).specs;
}

std::int64_t PolicyParams::parameter_count() const {
  std::int64_t n = 0;
  for (const Eigen::MatrixXd& m : tensors) n += m.size();
  return n;
}

PolicyParams init_policy(const PolicyConfig& config, Rng& rng) {
  PolicyParams out;
  out.config = config;
  const std::vector<TensorSpec> specs = layout(config);
  out.tensors.reserve(specs.size());
  for (const TensorSpec& spec : specs) {
    Eigen::MatrixXd m(spec.rows, spec.cols);
    switch (spec.init) {
      case TensorSpec::Init::kFanInUniform: {
        const double bound = std::sqrt(1.0 / spec.rows);
        for (int i = 0; i < spec.rows; ++i) {
          for (int j = 0; j < spec.cols; ++j) {
            m(i, j) = rng.uniform(-bound, bound);
          }
        }
        break;
      }
      case TensorSpec::Init::kZero:
        m.setZero();
        break;
      case TensorSpec::Init::kOne:
        m.setOnes();
        break;
    }
    out.tensors.push_back(std::move(m));
  }
  return out;
}

BoundPolicy bind_policy(tape::Tape& t, const PolicyParams& params,
                        bool trainable) {
  const std::vector<TensorSpec> specs = layout(params.config);
  if (specs.size() != params.tensors.size()) {
    throw std::invalid_argument("policy: tensor list does not match layout");
  }
  BoundPolicy bound;
  bound.config = &params.config;
  bound.params.reserve(params.tensors.size());
  for (size_t i = 0; i < params.tensors.size(); ++i) {
    const Eigen::MatrixXd& m = params.tensors[i];
    if (m.rows() != specs[i].rows || m.cols() != specs[i].cols) {
      throw std::invalid_argument("policy: tensor shape mismatch at " +
                                  specs[i].name);
    }
    bound.params.push_back(trainable ? t.input(m) : t.constant(m));
  }
  return bound;
}

tape::Var policy_step(tape::Tape& t, const BoundPolicy& bound,
                      tape::Var task_history,
                      std::optional<tape::Var> safety_history,
                      double budget_scaled) {
  using namespace tape;
  const PolicyConfig& c = *bound.config;
  const Schema schema = build_schema(c);
  const std::vector<Var>& p = bound.params;

  if (t.value(task_history).rows() == 0) {
    throw std::invalid_argument("policy: empty task history");
  }
  if (t.value(task_history).cols() != c.dim + 1) {
    throw std::invalid_argument("policy: task history must be n x (D+1)");
  }
  if (c.has_safety_branch != safety_history.has_value()) {
    throw std::invalid_argument(
        "policy: safety history must match the safety branch");
  }

  std::vector<Var> pooled;
  pooled.push_back(encode_branch(t, c, p, schema.task, task_history));
  if (schema.safety) {
    if (t.value(*safety_history).rows() == 0) {
      throw std::invalid_argument("policy: empty safety history");
    }
    if (t.value(*safety_history).cols() != c.dim + 1) {
      throw std::invalid_argument("policy: safety history must be n x (D+1)");
    }
    pooled.push_back(
        encode_branch(t, c, p, *schema.safety, *safety_history));
  }
  if (c.has_budget_input) {
    const Var b = t.constant(Eigen::MatrixXd::Constant(1, 1, budget_scaled));
    pooled.push_back(mlp2(t, b, p[schema.budget_w1], p[schema.budget_b1],
                          p[schema.budget_w2], p[schema.budget_b2]));
  }
  const Var joint = pooled.size() == 1 ? pooled[0] : concat_cols(t, pooled);
  const Var dec = mlp2(t, joint, p[schema.dec_w1], p[schema.dec_b1],
                       p[schema.dec_w2], p[schema.dec_b2]);
  return add_const(t, scale(t, tanh_(t, dec), 0.5), 0.5);
}

Eigen::VectorXd policy_query(const PolicyParams& params, int budget_remaining,
                             int budget_horizon, const Dataset& history) {
  if (history.size() == 0) {
    throw std::invalid_argument("policy: empty history");
  }
  if (budget_remaining < 1 || budget_horizon < 1) {
    throw std::invalid_argument("policy: budget must be positive");
  }
  const PolicyConfig& c = params.config;
  if (history.dim() != c.dim) {
    throw std::invalid_argument("policy: history dimension mismatch");
  }
  tape::Tape t;
  const BoundPolicy bound = bind_policy(t, params, /*trainable=*/false);

  const int n = history.size();
  Eigen::MatrixXd task(n, c.dim + 1);
  task.leftCols(c.dim) = history.inputs;
  task.col(c.dim) = history.outputs;
  const tape::Var task_var = t.constant(task);

  std::optional<tape::Var> safety_var;
  if (c.has_safety_branch) {
    if (!history.safety) {
      throw std::invalid_argument("policy: history lacks safety values");
    }
    Eigen::MatrixXd safety(n, c.dim + 1);
    safety.leftCols(c.dim) = history.inputs;
    safety.col(c.dim) = *history.safety;
    safety_var = t.constant(safety);
  }
  const double scaled =
      static_cast<double>(budget_remaining) / budget_horizon;
  const tape::Var out = policy_step(t, bound, task_var, safety_var, scaled);
  return t.value(out).row(0).transpose();
}

void save_checkpoint(const PolicyParams& params, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("policy: cannot open " + path);
  os.write(kMagic, 8);
  serialize::write_u32(os, kVersion);
  serialize::write_string(os, kActivation);
  const PolicyConfig& c = params.config;
  serialize::write_u32(os, static_cast<std::uint32_t>(c.dim));
  serialize::write_u32(os, static_cast<std::uint32_t>(c.embed_dim));
  serialize::write_u32(os, static_cast<std::uint32_t>(c.hidden));
  serialize::write_u32(os, static_cast<std::uint32_t>(c.encoder_layers));
  serialize::write_u32(os, static_cast<std::uint32_t>(c.head_dim));
  std::uint32_t flags = 0;
  if (c.has_safety_branch) flags |= 1u;
  if (c.has_budget_input) flags |= 2u;
  if (c.mode == PolicyConfig::Mode::kAttention) flags |= 4u;
  serialize::write_u32(os, flags);
  serialize::write_u64(os, params.tensors.size());
  const std::vector<TensorSpec> specs = layout(c);
  for (size_t i = 0; i < params.tensors.size(); ++i) {
    serialize::write_string(os, specs[i].name);
    serialize::write_matrix(os, params.tensors[i]);
  }
  if (!os) throw std::runtime_error("policy: short write to " + path);
}

PolicyParams load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("policy: cannot open " + path);
  char magic[8] = {};
  is.read(magic, 8);
  serialize::check_stream(is, "magic");
  if (std::string(magic, 8) != kMagic) {
    throw std::runtime_error("policy: not a policy checkpoint: " + path);
  }
  const std::uint32_t version = serialize::read_u32(is);
  if (version != kVersion) {
    throw std::runtime_error("policy: unsupported checkpoint version");
  }
  const std::string activation = serialize::read_string(is);
  if (activation != kActivation) {
    throw std::runtime_error("policy: unsupported activation " + activation);
  }
  PolicyParams out;
  PolicyConfig& c = out.config;
  c.dim = static_cast<int>(serialize::read_u32(is));
  c.embed_dim = static_cast<int>(serialize::read_u32(is));
  c.hidden = static_cast<int>(serialize::read_u32(is));
  c.encoder_layers = static_cast<int>(serialize::read_u32(is));
  c.head_dim = static_cast<int>(serialize::read_u32(is));
  const std::uint32_t flags = serialize::read_u32(is);
  c.has_safety_branch = (flags & 1u) != 0;
  c.has_budget_input = (flags & 2u) != 0;
  c.mode = (flags & 4u) != 0 ? PolicyConfig::Mode::kAttention
                             : PolicyConfig::Mode::kDeepSet;
  const std::vector<TensorSpec> specs = layout(c);
  const std::uint64_t count = serialize::read_u64(is);
  if (count != specs.size()) {
    throw std::runtime_error("policy: checkpoint tensor count mismatch");
  }
  out.tensors.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string name = serialize::read_string(is);
    if (name != specs[i].name) {
      throw std::runtime_error("policy: checkpoint tensor order mismatch at " +
                               name);
    }
    Eigen::MatrixXd m = serialize::read_matrix(is);
    if (m.rows() != specs[i].rows || m.cols() != specs[i].cols) {
      throw std::runtime_error("policy: checkpoint tensor shape mismatch at " +
                               name);
    }
    out.tensors.push_back(std::move(m));
  }
  return out;
}

}  // namespace asal::policy
