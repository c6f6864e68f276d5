#pragma once

namespace vtmig::marl {

struct MarlConfig {
  double gamma = 0.99;
  double clip = 0.2;
  double actor_lr = 3e-4;
  double critic_lr = 1e-3;
  int epochs = 4;          // inner update passes per batch
  int hidden = 128;
  int layers = 2;
  int episodes = 300;
  int episodes_per_batch = 1;
  int minibatch = 256;
  bool share_params = true;
  bool normalize_advantage = true;
  bool bootstrap = false;  // TD targets from the critic instead of Monte-Carlo returns
  double entropy_coef = 0.0;
  double max_grad_norm = 1.0;
  int train_scenarios = 32;  // distinct scenario seeds cycled during training
  int eval_seeds = 20;
};

}  // namespace vtmig::marl
