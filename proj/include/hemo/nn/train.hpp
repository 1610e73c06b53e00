#pragma once

#include <limits>
#include <vector>

namespace hemo::nn {

struct TrainLog {
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  int best_epoch = -1;
  double best_val = std::numeric_limits<double>::infinity();
  bool early_stopped = false;
};

// Patience-based early stopping on the validation loss, min-delta 0.
class EarlyStopper {
 public:
  explicit EarlyStopper(int patience) : patience_(patience) {}

  // Returns true if this is a new best.
  bool observe(double val) {
    if (val < best_) {
      best_ = val;
      since_best_ = 0;
      return true;
    }
    ++since_best_;
    return false;
  }

  bool should_stop() const { return since_best_ >= patience_; }
  double best() const { return best_; }

 private:
  int patience_ = 0;
  int since_best_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
};

}  // namespace hemo::nn
