//! The fitting procedure: a k-n-m feed-forward network with one ReLU
//! hidden layer and a linear output layer, trained with mini-batch Adam on
//! the mean squared error, evaluated by 5-fold cross validation with an
//! inner grid search over hidden-layer sizes.

mod crossval;
mod network;

pub use crossval::{
    grid_search_hidden_units, kfold_split, run_experiment, CandidateScore, ExperimentResult,
    FoldOutcome, GridSearchOutcome, RunOptions,
};
pub use network::{init_network, mse, train, Gradients, NetworkSpec, TrainConfig, TrainedModel};
