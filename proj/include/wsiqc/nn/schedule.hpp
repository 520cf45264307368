#pragma once

#include <limits>
#include <utility>

namespace wsiqc::nn {

// Reduce-on-plateau, monitoring val_loss. Pure state machine: feeding a
// recorded loss trace reproduces the recorded lr trace exactly.
struct PlateauState {
    double best_val_loss = std::numeric_limits<double>::infinity();
    int epochs_since_improvement = 0;
    int patience = 4;
    double factor = 0.1;
};

inline std::pair<double, PlateauState> plateau_step(PlateauState state, double val_loss,
                                                    double current_lr) {
    if (val_loss < state.best_val_loss) {
        state.best_val_loss = val_loss;
        state.epochs_since_improvement = 0;
        return {current_lr, state};
    }
    ++state.epochs_since_improvement;
    if (state.epochs_since_improvement >= state.patience) {
        state.epochs_since_improvement = 0;
        return {current_lr * state.factor, state};
    }
    return {current_lr, state};
}

// Early stopping on val_loss: stop after `patience` consecutive epochs
// without a new best.
struct EarlyStopState {
    double best_val_loss = std::numeric_limits<double>::infinity();
    int epochs_since_improvement = 0;
    int patience = 10;
};

inline std::pair<bool, EarlyStopState> early_stop_step(EarlyStopState state,
                                                       double val_loss) {
    if (val_loss < state.best_val_loss) {
        state.best_val_loss = val_loss;
        state.epochs_since_improvement = 0;
        return {false, state};
    }
    ++state.epochs_since_improvement;
    return {state.epochs_since_improvement >= state.patience, state};
}

}  // namespace wsiqc::nn
