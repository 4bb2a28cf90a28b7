#pragma once

// Seeded synthetic task generators for the continual fine-tuning lab, the
// counter-based mini-batch sampler, and the dataset file formats.
//
// Dataset files (v1):
//   labeled:   "# finch-dataset v1" line, then a CSV header x0..x{d-1},q0..q{K-1},
//              then one example per row (features, then target probabilities).
//   sequences: "# finch-sequences v1" line, then one sequence per line as
//              whitespace-separated token ids.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "finch/errors.hpp"
#include "finch/format.hpp"
#include "finch/model.hpp"

namespace finch {

enum class TaskFamily { gaussian_mixture_shift, label_permutation, feature_rotation, seq_bigram_shift };

inline std::string family_name(TaskFamily f) {
  switch (f) {
    case TaskFamily::gaussian_mixture_shift: return "gaussian_mixture_shift";
    case TaskFamily::label_permutation: return "label_permutation";
    case TaskFamily::feature_rotation: return "feature_rotation";
    case TaskFamily::seq_bigram_shift: return "seq_bigram_shift";
  }
  return "?";
}

inline TaskFamily parse_family(const std::string& s) {
  for (auto f : {TaskFamily::gaussian_mixture_shift, TaskFamily::label_permutation, TaskFamily::feature_rotation,
                 TaskFamily::seq_bigram_shift})
    if (family_name(f) == s) return f;
  throw DomainError("unknown task family '" + s + "'");
}

/// One data-generating distribution. `seed` fixes the shared structure
/// (class means, bigram logits); `shift` and `variant_seed` deform it, so an
/// old/new pair typically shares `seed` and differs in `shift`.
///
///   gaussian_mixture_shift: x = mu_y + noise * N(0, I); mu_y += shift * separation * nu_y
///   label_permutation:      same mixture; labels remapped by a seeded permutation when shift > 0
///   feature_rotation:       same mixture; x rotated by angle `shift` in d/2 random planes
///   seq_bigram_shift:       bigram chain, logits ~ separation * N(0,1) + shift * N(0,1)
struct GeneratorSpec {
  TaskFamily family = TaskFamily::gaussian_mixture_shift;
  std::size_t classes = 5;  // vocab size for sequences
  std::size_t features = 20;
  unsigned long long seed = 1;
  unsigned long long variant_seed = 2;
  double separation = 1.0;
  double noise = 1.0;
  double shift = 0.0;
  std::size_t seq_length = 8;

  bool operator==(const GeneratorSpec&) const = default;
};

struct TaskPair {
  GeneratorSpec old_task;
  GeneratorSpec new_task;
  std::size_t old_train_size = 2000;
  std::size_t old_holdout_size = 500;
  std::size_t train_size = 2000;
  std::size_t new_eval_size = 500;
  unsigned long long data_seed = 7;

  bool operator==(const TaskPair&) const = default;
};

inline void validate(const TaskPair& t) {
  if (t.old_task == t.new_task) throw DomainError("old and new task generators must differ in at least one parameter");
  if (t.old_task.family == TaskFamily::seq_bigram_shift || t.new_task.family == TaskFamily::seq_bigram_shift) {
    if (t.old_task.family != t.new_task.family) throw DomainError("sequence and labeled tasks cannot be mixed");
  }
  for (const auto* g : {&t.old_task, &t.new_task}) {
    if (g->classes < 2) throw DomainError("task needs at least 2 classes");
    if (g->features < 1) throw DomainError("task needs at least 1 feature");
    if (g->family == TaskFamily::seq_bigram_shift && g->seq_length < 1)
      throw DomainError("sequence length must be >= 1");
    if (!(g->noise >= 0.0) || !(g->separation >= 0.0) || !std::isfinite(g->shift))
      throw DomainError("generator noise/separation must be nonnegative and shift finite");
  }
  if (t.old_task.classes != t.new_task.classes || t.old_task.features != t.new_task.features)
    throw DomainError("old and new tasks must share class count and feature dimension");
  if (t.old_holdout_size < 1 || t.train_size < 1 || t.new_eval_size < 1)
    throw DomainError("dataset sizes must be >= 1");
}

/// Engine seeded from (seed, stream, index); the draw at index i never depends
/// on draws at other indices.
inline std::mt19937_64 counter_rng(unsigned long long seed, std::uint32_t stream, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), stream,
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

namespace detail {

inline Vector gaussian_vector(std::mt19937_64& rng, std::size_t n, double scale) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector v(n);
  for (std::size_t i = 0; i < n; ++i) v[static_cast<Eigen::Index>(i)] = scale * normal(rng);
  return v;
}

/// Frozen structure of a generator; sampling draws from it.
struct Generator {
  GeneratorSpec spec;
  std::vector<Vector> means;
  std::vector<std::size_t> relabel;
  Matrix rotation;
  Matrix transition;  // row-stochastic, sequences only

  explicit Generator(const GeneratorSpec& g) : spec(g) {
    const std::size_t k = g.classes;
    const std::size_t d = g.features;
    std::mt19937_64 base(g.seed);
    std::mt19937_64 variant(g.variant_seed);
    if (g.family == TaskFamily::seq_bigram_shift) {
      transition = Matrix(k, k);
      std::normal_distribution<double> normal;
      for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) transition(i, j) = g.separation * normal(base);
      for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) transition(i, j) += g.shift * normal(variant);
      for (std::size_t i = 0; i < k; ++i) {
        auto row = transition.row(i);
        row = (row.array() - row.maxCoeff()).exp().matrix();
        row /= row.sum();
      }
      return;
    }
    for (std::size_t c = 0; c < k; ++c) means.push_back(gaussian_vector(base, d, g.separation));
    relabel.resize(k);
    std::iota(relabel.begin(), relabel.end(), 0);
    rotation = Matrix::Identity(d, d);
    if (g.family == TaskFamily::gaussian_mixture_shift) {
      for (auto& m : means) m += gaussian_vector(variant, d, g.shift * g.separation);
    } else if (g.family == TaskFamily::label_permutation && g.shift > 0.0) {
      // Cyclic shift composed with a seeded shuffle: every class moves.
      std::vector<std::size_t> order(k);
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), variant);
      for (std::size_t i = 0; i < k; ++i) relabel[order[i]] = order[(i + 1) % k];
    } else if (g.family == TaskFamily::feature_rotation && g.shift != 0.0 && d >= 2) {
      const Matrix gauss = Matrix::NullaryExpr(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d),
                                               [&]() { return std::normal_distribution<double>()(variant); });
      const Matrix basis = Eigen::HouseholderQR<Matrix>(gauss).householderQ();
      Matrix planar = Matrix::Identity(d, d);
      const double c = std::cos(g.shift);
      const double s = std::sin(g.shift);
      for (std::size_t p = 0; p + 1 < d; p += 2) {
        planar(p, p) = c;
        planar(p, p + 1) = -s;
        planar(p + 1, p) = s;
        planar(p + 1, p + 1) = c;
      }
      rotation = basis * planar * basis.transpose();
    }
  }

  LabeledExample labeled(std::mt19937_64& rng) const {
    const std::size_t k = spec.classes;
    const std::size_t y = static_cast<std::size_t>(rng() % k);
    Vector x = means[y] + gaussian_vector(rng, spec.features, spec.noise);
    if (spec.family == TaskFamily::feature_rotation) x = rotation * x;
    return {std::move(x), one_hot(k, relabel[y])};
  }

  SequenceExample sequence(std::mt19937_64& rng) const {
    const std::size_t k = spec.classes;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    SequenceExample s;
    std::size_t tok = static_cast<std::size_t>(rng() % k);
    s.tokens.push_back(static_cast<int>(tok));
    while (s.tokens.size() < spec.seq_length) {
      const double u = unit(rng);
      double acc = 0.0;
      std::size_t next = k - 1;
      for (std::size_t j = 0; j < k; ++j) {
        acc += transition(static_cast<Eigen::Index>(tok), static_cast<Eigen::Index>(j));
        if (u < acc) {
          next = j;
          break;
        }
      }
      tok = next;
      s.tokens.push_back(static_cast<int>(tok));
    }
    return s;
  }
};

}  // namespace detail

/// Draws `n` examples; example i is a pure function of (spec, seed, stream, i).
inline ExampleList generate(const GeneratorSpec& spec, std::size_t n, unsigned long long seed, std::uint32_t stream) {
  const detail::Generator gen(spec);
  if (spec.family == TaskFamily::seq_bigram_shift) {
    std::vector<SequenceExample> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      auto rng = counter_rng(seed, stream, i);
      out.push_back(gen.sequence(rng));
    }
    return out;
  }
  std::vector<LabeledExample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto rng = counter_rng(seed, stream, i);
    out.push_back(gen.labeled(rng));
  }
  return out;
}

/// Materialized datasets of a task pair.
struct TaskData {
  ExampleList old_train;
  ExampleList old_holdout;
  ExampleList new_train;
  ExampleList new_eval;
};

inline TaskData make_task_data(const TaskPair& task) {
  validate(task);
  return {generate(task.old_task, task.old_train_size, task.data_seed, 1),
          generate(task.old_task, task.old_holdout_size, task.data_seed, 2),
          generate(task.new_task, task.train_size, task.data_seed, 3),
          generate(task.new_task, task.new_eval_size, task.data_seed, 4)};
}

/// With-replacement mini-batch for step `step`: a pure function of (seed, step).
inline Batch sample_batch(const ExampleList& data, std::size_t batch_size, unsigned long long seed, std::size_t step) {
  if (batch_size < 1) throw DomainError("batch_size must be >= 1");
  const std::size_t n = example_count(data);
  if (n == 0) throw DomainError("cannot sample from an empty dataset");
  auto rng = counter_rng(seed, 5, step);
  return std::visit(
      [&](const auto& v) {
        std::decay_t<decltype(v)> out;
        out.reserve(batch_size);
        for (std::size_t j = 0; j < batch_size; ++j) out.push_back(v[static_cast<std::size_t>(rng() % n)]);
        return Batch(ExampleList(std::move(out)));
      },
      data);
}

inline constexpr std::string_view kLabeledHeader = "# finch-dataset v1";
inline constexpr std::string_view kSequenceHeader = "# finch-sequences v1";

inline void write_dataset(std::ostream& out, const ExampleList& data) {
  if (const auto* seqs = std::get_if<std::vector<SequenceExample>>(&data)) {
    out << kSequenceHeader << '\n';
    for (const auto& s : *seqs) {
      for (std::size_t i = 0; i < s.tokens.size(); ++i) out << (i ? " " : "") << s.tokens[i];
      out << '\n';
    }
    return;
  }
  const auto& rows = std::get<std::vector<LabeledExample>>(data);
  out << kLabeledHeader << '\n';
  if (rows.empty()) return;
  const auto d = rows.front().x.size();
  const auto k = rows.front().q.size();
  for (Eigen::Index j = 0; j < d; ++j) out << (j ? "," : "") << 'x' << j;
  for (Eigen::Index j = 0; j < k; ++j) out << ",q" << j;
  out << '\n';
  for (const auto& e : rows) {
    for (Eigen::Index j = 0; j < d; ++j) out << (j ? "," : "") << format_double(e.x[j]);
    for (Eigen::Index j = 0; j < k; ++j) out << ',' << format_double(e.q[j]);
    out << '\n';
  }
}

inline ExampleList read_dataset(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty dataset file", 1, 1);
  if (line == kSequenceHeader) {
    std::vector<SequenceExample> out;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
      ++line_no;
      if (trim(line).empty()) continue;
      std::istringstream row(line);
      SequenceExample s;
      std::string tok;
      while (row >> tok) {
        const auto v = parse_integer(tok);
        if (!v || *v < 0) throw ParseError("malformed token id '" + tok + "'", line_no, 1);
        s.tokens.push_back(static_cast<int>(*v));
      }
      out.push_back(std::move(s));
    }
    return out;
  }
  if (line != kLabeledHeader) throw ParseError("missing dataset version line", 1, 1);
  if (!std::getline(in, line)) throw ParseError("missing CSV header", 2, 1);
  std::size_t d = 0;
  std::size_t k = 0;
  {
    std::istringstream header(line);
    std::string col;
    while (std::getline(header, col, ',')) {
      if (!col.empty() && col[0] == 'x' && k == 0) ++d;
      else if (!col.empty() && col[0] == 'q') ++k;
      else throw ParseError("unexpected header column '" + col + "'", 2, 1);
    }
  }
  if (d == 0 || k < 2) throw ParseError("header needs x and at least two q columns", 2, 1);
  std::vector<LabeledExample> out;
  std::size_t line_no = 2;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    LabeledExample e{Vector(d), Vector(k)};
    std::istringstream row(line);
    std::string cell;
    std::size_t col = 0;
    std::size_t column_pos = 1;
    while (std::getline(row, cell, ',')) {
      const auto v = parse_double(trim(cell));
      if (!v || col >= d + k) throw ParseError("malformed cell '" + cell + "'", line_no, column_pos);
      if (col < d) e.x[static_cast<Eigen::Index>(col)] = *v;
      else e.q[static_cast<Eigen::Index>(col - d)] = *v;
      ++col;
      column_pos += cell.size() + 1;
    }
    if (col != d + k) throw ParseError("row has " + std::to_string(col) + " cells, expected " + std::to_string(d + k), line_no, 1);
    if ((e.q.array() < 0.0).any() || std::abs(e.q.sum() - 1.0) > 1e-12)
      throw ParseError("target probabilities must be nonnegative and sum to 1", line_no, 1);
    out.push_back(std::move(e));
  }
  return out;
}

/// Largest input norm in a dataset (the measured B_x).
inline double max_input_norm(const Architecture& arch, const ExampleList& data) {
  double m = 0.0;
  for_each_position(arch, data, [&](const Vector& x, const Vector&, double) { m = std::max(m, x.norm()); });
  return m;
}

}  // namespace finch
