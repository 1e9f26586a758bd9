//! Bangla fake-news detection: corpus ingestion, Bengali text preprocessing,
//! a small reverse-mode neural network engine, six recurrent/convolutional
//! classifiers, training, evaluation and a command-line front end.

pub mod cli;
pub mod corpus;
pub mod evaluation;
pub mod models;
pub mod nnet;
pub mod textprep;
pub mod tokenizer;
pub mod training;
