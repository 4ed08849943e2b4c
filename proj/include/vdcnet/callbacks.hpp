#pragma once

#include <limits>
#include <vector>

namespace vdcnet {

struct CallbackConfig {
  int max_epochs = 100;
  int early_stop_patience = 20;
  int lr_patience = 6;
  double lr_factor = 0.1;
  double base_lr = 1e-3;
  double min_lr = 1e-5;  // floor; with the defaults the rate drops at most twice
  double min_delta = 0;  // improvement means loss < best - min_delta

  void validate() const;  // throws ConfigError
};

struct CallbackDecision {
  bool improved = false;
  bool lr_dropped = false;
  bool stop = false;
  double lr = 0;  // rate to use for the next epoch
};

// Validation-loss monitor implementing plateau LR reduction, early stopping
// and best-epoch tracking. Epochs are numbered from 1.
class TrainingMonitor {
 public:
  explicit TrainingMonitor(const CallbackConfig& config);

  CallbackDecision end_epoch(int epoch, double val_loss);

  double lr() const noexcept { return lr_; }
  int best_epoch() const noexcept { return best_epoch_; }
  double best_loss() const noexcept { return best_; }

 private:
  CallbackConfig config_;
  double lr_;
  double best_ = std::numeric_limits<double>::infinity();
  int best_epoch_ = 0;
  int stop_wait_ = 0, lr_wait_ = 0;
};

struct ScriptOutcome {
  std::vector<int> lr_drop_epochs;
  int stop_epoch = 0;  // last epoch run
  bool stopped_early = false;
  int best_epoch = 0;
};

// Runs the monitor over a scripted validation-loss sequence (one entry per
// epoch; the run ends at the sequence end, max_epochs or an early stop).
ScriptOutcome run_script(const std::vector<double>& val_losses, const CallbackConfig& config);

}  // namespace vdcnet
