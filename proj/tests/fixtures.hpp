#pragma once

// Small continual scenario shared by the suites: the reference task at
// reduced dataset sizes, with a pretrained starting point cached per index.

#include <map>

#include "finch/config.hpp"
#include "finch/lab.hpp"

namespace fixture {

inline finch::RunConfig small_config(unsigned index = 1) {
  finch::RunConfig c = finch::reference_config(index);
  c.task.old_train_size = 600;
  c.task.old_holdout_size = 200;
  c.task.train_size = 600;
  c.task.new_eval_size = 200;
  c.pretrain_steps = 300;
  c.steps = 60;
  return c;
}

struct Scenario {
  finch::RunConfig config;
  finch::TaskData data;
  finch::ModelParams theta0;
};

inline const Scenario& scenario(unsigned index = 1) {
  static std::map<unsigned, Scenario> cache;
  auto it = cache.find(index);
  if (it == cache.end()) {
    const finch::RunConfig c = small_config(index);
    finch::TaskData d = finch::make_task_data(c.task);
    finch::ModelParams p = finch::pretrain(d, c.model_spec(), c.pretrain_config());
    it = cache.emplace(index, Scenario{c, std::move(d), std::move(p)}).first;
  }
  return it->second;
}

}  // namespace fixture
