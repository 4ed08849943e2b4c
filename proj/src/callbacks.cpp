#include "vdcnet/callbacks.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "vdcnet/errors.hpp"

namespace vdcnet {

void CallbackConfig::validate() const {
  if (max_epochs < 1) throw ConfigError("max_epochs must be at least 1");
  if (early_stop_patience < 1 || lr_patience < 1) throw ConfigError("patience values must be at least 1");
  if (double(early_stop_patience) / double(lr_patience) <= 2) {
    throw ConfigError("early stopping patience must exceed twice the LR patience (got " +
                      std::to_string(early_stop_patience) + " vs " + std::to_string(lr_patience) + ")");
  }
  if (!(lr_factor > 0 && lr_factor < 1)) throw ConfigError("lr_factor must lie in (0, 1)");
  if (!(base_lr > 0)) throw ConfigError("base learning rate must be positive");
  if (min_lr < 0 || min_lr > base_lr) throw ConfigError("min_lr must lie in [0, base_lr]");
  if (min_delta < 0) throw ConfigError("min_delta must be non-negative");
}

TrainingMonitor::TrainingMonitor(const CallbackConfig& config) : config_(config), lr_(config.base_lr) {
  config_.validate();
}

CallbackDecision TrainingMonitor::end_epoch(int epoch, double val_loss) {
  CallbackDecision d;
  if (val_loss < best_ - config_.min_delta) {
    best_ = val_loss;
    best_epoch_ = epoch;
    stop_wait_ = lr_wait_ = 0;
    d.improved = true;
  } else {
    ++stop_wait_;
    ++lr_wait_;
    if (lr_wait_ >= config_.lr_patience) {
      lr_wait_ = 0;
      // Relative margin so a rate that reached the floor through rounding stays put.
      if (lr_ > config_.min_lr * (1 + 1e-9)) {
        lr_ = std::max(lr_ * config_.lr_factor, config_.min_lr);
        d.lr_dropped = true;
      }
    }
    d.stop = stop_wait_ >= config_.early_stop_patience;
  }
  d.stop = d.stop || epoch >= config_.max_epochs;
  d.lr = lr_;
  return d;
}

ScriptOutcome run_script(const std::vector<double>& val_losses, const CallbackConfig& config) {
  TrainingMonitor monitor(config);
  ScriptOutcome out;
  for (std::size_t i = 0; i < val_losses.size(); ++i) {
    const int epoch = int(i) + 1;
    const CallbackDecision d = monitor.end_epoch(epoch, val_losses[i]);
    out.stop_epoch = epoch;
    if (d.lr_dropped) out.lr_drop_epochs.push_back(epoch);
    if (d.stop) {
      out.stopped_early = epoch < config.max_epochs;
      break;
    }
  }
  out.best_epoch = monitor.best_epoch();
  return out;
}

}  // namespace vdcnet
