//! Runs every example end to end.

macro_rules! example {
    ($name:ident) => {
        mod $name {
            include!(concat!("../examples/", stringify!($name), ".rs"));
        }

        #[test]
        fn $name() {
            $name::run_example().unwrap();
        }
    };
}

example!(resample_trajectory);
example!(generate_population);
example!(env_percentiles);
example!(driver_clustering);
example!(gradient_check);
example!(train_seq2seq);
example!(compare_models);
example!(window_sweep);
example!(run_pipeline);
