use sunet::model::{build_model, count_params, estimate_flops, SunetConfig};
fn main() {
    let cfg = SunetConfig::default();
    let flops = estimate_flops(&cfg, 256, 256).unwrap();
    println!("flops(256x256) = {flops} = {:.2}G", flops as f64 / 1e9);
    let model = build_model::<f32>(&cfg).unwrap();
    let params = count_params(&model);
    println!("params = {params} = {:.2}M", params as f64 / 1e6);
}
