#include <gtest/gtest.h>

#include <map>
#include <set>
#include <sstream>

#include "finch/data.hpp"

using namespace finch;

namespace {

bool same(const ExampleList& a, const ExampleList& b) {
  if (a.index() != b.index() || example_count(a) != example_count(b)) return false;
  if (const auto* la = std::get_if<std::vector<LabeledExample>>(&a)) {
    const auto& lb = std::get<std::vector<LabeledExample>>(b);
    for (std::size_t i = 0; i < la->size(); ++i)
      if ((*la)[i].x != lb[i].x || (*la)[i].q != lb[i].q) return false;
    return true;
  }
  const auto& sa = std::get<std::vector<SequenceExample>>(a);
  const auto& sb = std::get<std::vector<SequenceExample>>(b);
  for (std::size_t i = 0; i < sa.size(); ++i)
    if (sa[i].tokens != sb[i].tokens || sa[i].targets.size() != sb[i].targets.size()) return false;
  return true;
}

std::size_t label_of(const LabeledExample& e) {
  Eigen::Index i = 0;
  e.q.maxCoeff(&i);
  return static_cast<std::size_t>(i);
}

TaskPair small_pair(TaskFamily family) {
  TaskPair t;
  t.old_task.family = family;
  t.old_task.classes = 4;
  t.old_task.features = 6;
  t.new_task = t.old_task;
  t.new_task.shift = 1.0;
  t.old_train_size = 50;
  t.old_holdout_size = 20;
  t.train_size = 40;
  t.new_eval_size = 10;
  return t;
}

}  // namespace

TEST(Data, GenerationIsDeterministic) {
  for (auto f : {TaskFamily::gaussian_mixture_shift, TaskFamily::label_permutation, TaskFamily::feature_rotation,
                 TaskFamily::seq_bigram_shift}) {
    const auto t = small_pair(f);
    const TaskData a = make_task_data(t);
    const TaskData b = make_task_data(t);
    EXPECT_TRUE(same(a.old_train, b.old_train)) << family_name(f);
    EXPECT_TRUE(same(a.new_eval, b.new_eval)) << family_name(f);
    EXPECT_FALSE(same(a.old_train, a.old_holdout)) << family_name(f);
  }
}

TEST(Data, ExampleIsIndependentOfDatasetSize) {
  GeneratorSpec g;
  const auto small = generate(g, 5, 9, 1);
  const auto large = generate(g, 50, 9, 1);
  const auto& s = std::get<std::vector<LabeledExample>>(small);
  const auto& l = std::get<std::vector<LabeledExample>>(large);
  for (std::size_t i = 0; i < s.size(); ++i) EXPECT_EQ(s[i].x, l[i].x);
}

TEST(Data, LabelPermutationMovesEveryClass) {
  for (unsigned long long variant = 1; variant <= 30; ++variant) {
    GeneratorSpec old_spec;
    old_spec.family = TaskFamily::label_permutation;
    old_spec.classes = 5;
    GeneratorSpec new_spec = old_spec;
    new_spec.shift = 1.0;
    new_spec.variant_seed = variant;
    const auto a = std::get<std::vector<LabeledExample>>(generate(old_spec, 200, 3, 1));
    const auto b = std::get<std::vector<LabeledExample>>(generate(new_spec, 200, 3, 1));
    std::map<std::size_t, std::size_t> mapping;
    for (std::size_t i = 0; i < a.size(); ++i) {
      ASSERT_EQ(a[i].x, b[i].x);
      const std::size_t from = label_of(a[i]);
      const std::size_t to = label_of(b[i]);
      EXPECT_NE(from, to);
      const auto [it, inserted] = mapping.emplace(from, to);
      EXPECT_EQ(it->second, to);
    }
    std::set<std::size_t> image;
    for (const auto& [k, v] : mapping) image.insert(v);
    EXPECT_EQ(image.size(), mapping.size());
  }
}

TEST(Data, SequencesStayInVocabulary) {
  const auto t = small_pair(TaskFamily::seq_bigram_shift);
  const TaskData d = make_task_data(t);
  for (const auto& s : std::get<std::vector<SequenceExample>>(d.new_train)) {
    EXPECT_EQ(s.tokens.size(), t.new_task.seq_length);
    for (int tok : s.tokens) {
      EXPECT_GE(tok, 0);
      EXPECT_LT(tok, 4);
    }
  }
}

TEST(Data, ValidationRejectsBadPairs) {
  auto t = small_pair(TaskFamily::gaussian_mixture_shift);
  auto same_tasks = t;
  same_tasks.new_task = same_tasks.old_task;
  EXPECT_THROW(make_task_data(same_tasks), DomainError);
  auto mixed = t;
  mixed.new_task.family = TaskFamily::seq_bigram_shift;
  EXPECT_THROW(make_task_data(mixed), DomainError);
  auto dims = t;
  dims.new_task.features = 7;
  EXPECT_THROW(make_task_data(dims), DomainError);
  auto noise = t;
  noise.old_task.noise = -1.0;
  EXPECT_THROW(make_task_data(noise), DomainError);
  auto empty = t;
  empty.train_size = 0;
  EXPECT_THROW(make_task_data(empty), DomainError);
}

TEST(Data, DatasetTextRoundTrip) {
  for (auto f : {TaskFamily::gaussian_mixture_shift, TaskFamily::seq_bigram_shift}) {
    const TaskData d = make_task_data(small_pair(f));
    std::stringstream s;
    write_dataset(s, d.old_train);
    const ExampleList back = read_dataset(s);
    EXPECT_TRUE(same(back, d.old_train)) << family_name(f);
    std::stringstream again;
    write_dataset(again, back);
    std::stringstream first;
    write_dataset(first, d.old_train);
    EXPECT_EQ(again.str(), first.str());
  }
}

TEST(Data, MalformedDatasetIsRejected) {
  std::istringstream bad("# finch-dataset v1\nnot numbers\n");
  EXPECT_THROW(read_dataset(bad), ParseError);
  std::istringstream header("# other v1\n");
  EXPECT_THROW(read_dataset(header), ParseError);
}

TEST(Data, SampleBatchIsPureInSeedAndStep) {
  const TaskData d = make_task_data(small_pair(TaskFamily::gaussian_mixture_shift));
  const Batch a = sample_batch(d.new_train, 8, 5, 17);
  sample_batch(d.new_train, 8, 5, 3);
  const Batch b = sample_batch(d.new_train, 8, 5, 17);
  EXPECT_TRUE(same(a.examples(), b.examples()));
  EXPECT_EQ(a.size(), 8u);
  EXPECT_FALSE(same(a.examples(), sample_batch(d.new_train, 8, 5, 18).examples()));
  EXPECT_THROW(sample_batch(d.new_train, 0, 5, 0), DomainError);
}
