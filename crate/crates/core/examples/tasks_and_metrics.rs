//! The synthetic tasks and the two scorers.

use legonn::metrics::{bleu, corpus_wer};
use legonn::tasks::{Source, Split, Task, TaskKind, TaskSpec};

fn main() -> legonn::Result<()> {
    let words = Task::target_vocab();
    for kind in TaskKind::ALL {
        let task = Task::new(TaskSpec::new(kind))?;
        let data = task.generate(3, Split::Train, 1)?;
        println!("== {kind}");
        for ex in &data.examples {
            let src = match &ex.source {
                Source::Tokens(t) => task.source_vocab()?.decode(t)?.join(" "),
                Source::Frames(f) => format!("{} frames of dim {}", f.shape()[0], f.shape()[1]),
            };
            println!("  {src}  ->  {}", words.decode(&ex.target)?.join(" "));
        }
    }

    let refs = vec![vec![3, 4, 5, 6], vec![7, 8, 9]];
    let hyps = vec![vec![3, 4, 6], vec![7, 8, 9]];
    println!("WER {:.3}  BLEU {:.3}", corpus_wer(&hyps, &refs)?, bleu(&hyps, &refs, 4)?);
    Ok(())
}
