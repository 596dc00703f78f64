//! Modular arithmetic chains, their token encoding and the base model's
//! input layout.

use thoughtcal::pipeline::base::{prefix_tokens, target_tokens};
use thoughtcal::pipeline::task::{gen_dataset, parse_question, Split};
use thoughtcal::{Result, RunConfig};

fn main() -> Result<()> {
    let cfg = RunConfig::default();
    for q in gen_dataset(cfg.seed(), 0, 5, Split::Train, &cfg.task)? {
        println!("{:<20} -> {:?} answer {}", q.question_text(), q.reasoning_tokens, q.answer_token);
    }
    let q = parse_question("3 +4 x2", cfg.task.modulus)?;
    let layout = cfg.base_config();
    println!("question tokens {:?}", q.question_tokens);
    println!("model prefix    {:?}", prefix_tokens(&layout, &q.question_tokens)?);
    println!("targets         {:?}", target_tokens(&layout, &q));
    println!("thought slots   {}..{}", layout.slot_start(), layout.slot_start() + layout.n_thoughts);
    Ok(())
}
