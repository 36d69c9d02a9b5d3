// Steps the cyclic target selector through three full cycles and prints
// the switch events as they appear in the run log.

use mtda::ods::OdsState;

pub fn run_example() -> mtda::Result<Vec<String>> {
    let mut ods = OdsState::new(vec!["target_a".into(), "target_b".into(), "target_c".into()])?;
    let mut visited = vec![ods.current_domain().to_string()];
    for _ in 0..3 * ods.num_domains() {
        let switch = ods.on_epoch_complete();
        println!("{}", serde_json::to_string(&switch)?);
        visited.push(ods.current_domain().to_string());
    }
    println!("visited: {}", visited.join(" > "));
    Ok(visited)
}

fn main() {
    run_example().expect("selector example failed");
}
