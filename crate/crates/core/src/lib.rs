pub mod curriculum;
pub mod datagen;
pub mod harness;
pub mod model;
pub mod numerics;
pub mod seeding;
pub mod training;
